#include "hcanet/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include "hcanet/errors.hpp"

namespace hcanet {

namespace {

std::atomic<long> override_threads{-1};

std::size_t from_env() {
    const char* v = std::getenv("HCANET_THREADS");
    if (!v || !*v) return std::max(1u, std::thread::hardware_concurrency());
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (*end != '\0' || n < 0) throw ConfigError(std::string("HCANET_THREADS must be a nonnegative integer, got '") + v + "'");
    return static_cast<std::size_t>(n);
}

}  // namespace

std::size_t worker_threads() {
    const long o = override_threads.load();
    return o >= 0 ? static_cast<std::size_t>(o) : from_env();
}

void set_worker_threads(long n) { override_threads.store(n); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min(worker_threads(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace hcanet
