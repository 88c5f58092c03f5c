#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace mpmae {

// Fork-join pool with static range partitioning. Every output element is
// written by exactly one worker and reductions are expressed over a fixed
// chunk count, so results do not depend on the number of threads.
class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    int size() const { return static_cast<int>(workers_.size()) + 1; }

    void set_size(int n) {
        if (n < 1) n = 1;
        shutdown();
        start(n - 1);
    }

    // fn(begin, end) over [0, n) split into one contiguous range per thread.
    void for_range(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
        if (n <= 0) return;
        const int nt = size();
        if (nt == 1 || n == 1) {
            fn(0, n);
            return;
        }
        const std::int64_t per = (n + nt - 1) / nt;
        std::int64_t submitted = 0;
        {
            std::unique_lock<std::mutex> lock(mu_);
            pending_ = 0;
            for (int t = 1; t < nt; ++t) {
                const std::int64_t b = t * per;
                const std::int64_t e = std::min<std::int64_t>(n, b + per);
                if (b >= e) continue;
                tasks_.push_back([&fn, b, e] { fn(b, e); });
                ++pending_;
                ++submitted;
            }
        }
        cv_.notify_all();
        fn(0, std::min<std::int64_t>(n, per));
        if (submitted > 0) {
            std::unique_lock<std::mutex> lock(mu_);
            done_cv_.wait(lock, [this] { return pending_ == 0 && tasks_.empty(); });
        }
    }

    ~ThreadPool() { shutdown(); }

private:
    ThreadPool() {
        unsigned hw = std::thread::hardware_concurrency();
        start(hw > 1 ? static_cast<int>(hw) - 1 : 0);
    }

    void start(int n_workers) {
        stop_ = false;
        for (int i = 0; i < n_workers; ++i) {
            workers_.emplace_back([this] { worker_loop(); });
        }
    }

    void shutdown() {
        {
            std::unique_lock<std::mutex> lock(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
        workers_.clear();
    }

    void worker_loop() {
        for (;;) {
            std::function<void()> task;
            {
                std::unique_lock<std::mutex> lock(mu_);
                cv_.wait(lock, [this] { return stop_ || !tasks_.empty(); });
                if (stop_ && tasks_.empty()) return;
                task = std::move(tasks_.back());
                tasks_.pop_back();
            }
            task();
            {
                std::unique_lock<std::mutex> lock(mu_);
                --pending_;
                if (pending_ == 0 && tasks_.empty()) done_cv_.notify_all();
            }
        }
    }

    std::vector<std::thread> workers_;
    std::vector<std::function<void()>> tasks_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    int pending_ = 0;
    bool stop_ = false;
};

inline void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
    ThreadPool::instance().for_range(n, fn);
}

// Splits [0, n) into exactly `chunks` contiguous ranges (thread-count
// independent); fn(chunk_index, begin, end). Used for deterministic
// parallel reductions: partials are combined in chunk order afterwards.
inline void parallel_chunks(std::int64_t n, int chunks,
                            const std::function<void(int, std::int64_t, std::int64_t)>& fn) {
    if (n <= 0 || chunks < 1) return;
    const std::int64_t per = (n + chunks - 1) / chunks;
    std::vector<std::pair<int, std::pair<std::int64_t, std::int64_t>>> jobs;
    for (int c = 0; c < chunks; ++c) {
        const std::int64_t b = c * per;
        const std::int64_t e = std::min<std::int64_t>(n, b + per);
        if (b < e) jobs.push_back({c, {b, e}});
    }
    parallel_for(static_cast<std::int64_t>(jobs.size()), [&](std::int64_t jb, std::int64_t je) {
        for (std::int64_t j = jb; j < je; ++j) {
            fn(jobs[j].first, jobs[j].second.first, jobs[j].second.second);
        }
    });
}

}  // namespace mpmae
