#pragma once

// Deterministic fan-out: task i always writes slot i, so results do not
// depend on the worker count or on scheduling.

#include <algorithm>
#include <atomic>
#include <exception>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace ctilab {

inline unsigned default_workers() noexcept
{
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1u : hw;
}

template <typename T>
struct TaskResult
{
    std::optional<T> value;
    std::string error; // nonempty when the task threw
};

/// Run fn(i) for i in [0, n) on `workers` threads. A throwing task is
/// recorded in its own slot and does not stop the others.
template <typename T, typename Fn>
std::vector<TaskResult<T>> parallel_map(std::size_t n, unsigned workers, Fn&& fn)
{
    std::vector<TaskResult<T>> out(n);
    std::atomic<std::size_t> next{0};
    auto run = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                out[i].value.emplace(fn(i));
            } catch (const std::exception& e) {
                out[i].error = e.what();
                if (out[i].error.empty())
                    out[i].error = "unknown error";
            } catch (...) {
                out[i].error = "unknown error";
            }
        }
    };
    workers = std::max(1u, std::min<unsigned>(workers, unsigned(std::max<std::size_t>(n, 1))));
    if (workers == 1) {
        run();
        return out;
    }
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back(run);
    for (auto& t : pool)
        t.join();
    return out;
}

} // namespace ctilab
