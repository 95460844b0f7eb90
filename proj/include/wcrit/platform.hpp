#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace wcrit {

/// Training allocates and frees the same few-hundred-kB activation buffers
/// every step. glibc serves those through mmap by default, paying page
/// faults each time; keeping them on the heap is markedly faster.
/// No-op elsewhere.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
}

}  // namespace wcrit
