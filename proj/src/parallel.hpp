#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <future>
#include <optional>
#include <utility>
#include <vector>

namespace evcs::detail {

/// Runs fn(0..count-1) in batches of at most `jobs` concurrent calls. Results and exceptions
/// land at their index, so the outcome does not depend on scheduling.
template <class Fn>
auto run_jobs(std::size_t count, int jobs, Fn fn) {
    using R = decltype(fn(std::size_t{0}));
    std::vector<std::optional<R>> out(count);
    std::vector<std::exception_ptr> errors(count);
    auto task = [&](std::size_t k) {
        try {
            out[k].emplace(fn(k));
        } catch (...) {
            errors[k] = std::current_exception();
        }
    };
    for (std::size_t begin = 0; begin < count; begin += static_cast<std::size_t>(jobs)) {
        const auto end = std::min(count, begin + static_cast<std::size_t>(jobs));
        std::vector<std::future<void>> running;
        for (std::size_t k = begin + 1; k < end; ++k)
            running.push_back(std::async(std::launch::async, task, k));
        task(begin);
        for (auto& f : running)
            f.get();
    }
    return std::make_pair(std::move(out), std::move(errors));
}

}  // namespace evcs::detail
