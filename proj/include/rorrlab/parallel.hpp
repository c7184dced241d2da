#ifndef RORRLAB_PARALLEL_HPP
#define RORRLAB_PARALLEL_HPP

#include <algorithm>
#include <cstddef>
#include <future>
#include <thread>
#include <type_traits>
#include <vector>

namespace rorrlab {

inline std::size_t worker_count() {
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

// Evaluates fn(0..count-1), at most worker_count() at a time, and returns
// the results in index order. Exceptions surface in index order too, so the
// outcome never depends on scheduling.
template <typename Fn>
auto parallel_map(std::size_t count, Fn&& fn)
    -> std::vector<std::invoke_result_t<Fn&, std::size_t>> {
  using Result = std::invoke_result_t<Fn&, std::size_t>;
  std::vector<Result> out;
  out.reserve(count);
  const std::size_t width = worker_count();
  if (width == 1) {
    for (std::size_t i = 0; i < count; ++i) out.push_back(fn(i));
    return out;
  }
  for (std::size_t start = 0; start < count; start += width) {
    const std::size_t stop = std::min(count, start + width);
    std::vector<std::future<Result>> batch;
    for (std::size_t i = start; i < stop; ++i) {
      batch.push_back(std::async(std::launch::async, [&fn, i] { return fn(i); }));
    }
    for (auto& f : batch) out.push_back(f.get());
  }
  return out;
}

}  // namespace rorrlab

#endif
