#pragma once

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace hnat {

// Worker-count cap shared by the attention kernels. Defaults to 1
// (sequential); the CLI raises it from --threads / HYDRANAT_THREADS.
inline std::atomic<int>& thread_cap() {
    static std::atomic<int> cap{1};
    return cap;
}

inline void set_thread_cap(int n) { thread_cap().store(n < 1 ? 1 : n); }

inline int env_thread_cap() {
    if (const char* s = std::getenv("HYDRANAT_THREADS")) {
        int n = std::atoi(s);
        if (n >= 1) return n;
    }
    return 1;
}

// Runs fn(i) for i in [0, n). Work is split into contiguous index blocks,
// one per worker; each index is processed by exactly one thread, so results
// are identical to the sequential loop as long as fn(i) only writes state
// owned by index i.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    int workers = thread_cap().load();
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    if (static_cast<std::size_t>(workers) > n) workers = static_cast<int>(n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = lo + chunk < n ? lo + chunk : n;
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace hnat
