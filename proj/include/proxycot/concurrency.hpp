#pragma once

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace proxycot {

/// Counting gate bounding how many callers are inside a section at once.
class Gate {
public:
    explicit Gate(std::size_t limit) : limit_(std::max<std::size_t>(limit, 1)) {}

    void acquire() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return inside_ < limit_; });
        ++inside_;
    }
    void release() {
        {
            std::lock_guard lock(mu_);
            --inside_;
        }
        cv_.notify_one();
    }
    std::size_t limit() const { return limit_; }

private:
    std::size_t limit_;
    std::size_t inside_ = 0;
    std::mutex mu_;
    std::condition_variable cv_;
};

class GateGuard {
public:
    explicit GateGuard(Gate& g) : gate_(g) { gate_.acquire(); }
    ~GateGuard() { gate_.release(); }
    GateGuard(const GateGuard&) = delete;
    GateGuard& operator=(const GateGuard&) = delete;

private:
    Gate& gate_;
};

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Results land at
/// their index, so callers see input order whatever the completion order.
/// The exception of the lowest failing index is rethrown after all work ends.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
    if (n == 0) return;
    workers = std::clamp<std::size_t>(workers, 1, n);
    std::vector<std::exception_ptr> errors(n);
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

template <class T, class Fn>
std::vector<T> parallel_map(std::size_t n, std::size_t workers, Fn&& fn) {
    std::vector<T> out(n);
    parallel_for(n, workers, [&](std::size_t i) { out[i] = fn(i); });
    return out;
}

}  // namespace proxycot
