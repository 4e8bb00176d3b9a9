#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace obstransfer::harness {

// Training allocates and frees the same few hundred-KB buffers every step.
// glibc serves blocks that size with mmap, so each step pays fresh page
// faults; keeping them on the heap roughly halves the cost of a conv update.
inline void keep_large_blocks_on_heap()
{
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 64 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
}

}  // namespace obstransfer::harness
