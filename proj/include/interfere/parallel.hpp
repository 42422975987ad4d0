#ifndef INTERFERE_PARALLEL_HPP
#define INTERFERE_PARALLEL_HPP

#include <cstddef>
#include <functional>

namespace interfere {

/// Thread count used when a caller passes 0: INTERFERE_PS_THREADS if set,
/// else 1.
int default_thread_count();

/// Runs body(i) for i in [0, n) on up to `threads` workers using static
/// contiguous blocks. body must only write to slot i of its outputs.
/// The first exception thrown by any worker is rethrown on the caller.
void parallel_for(std::size_t n, int threads,
                  const std::function<void(std::size_t)>& body);

}  // namespace interfere

#endif  // INTERFERE_PARALLEL_HPP
