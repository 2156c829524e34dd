#pragma once

#include <atomic>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace ballseg {

namespace detail {

inline thread_local bool inside_pool_worker = false;

// One process-wide pool. parallel_for callers hand out disjoint work items,
// so results are bit-identical for any worker count or schedule.
class WorkerPool {
public:
    static WorkerPool& instance() {
        static WorkerPool pool;
        return pool;
    }

    void set_workers(int n) {
        if (n < 1) n = 1;
        std::unique_lock lk(control_);
        if (n == workers_) return;
        stop_threads();
        workers_ = n;
    }

    int workers() {
        std::unique_lock lk(control_);
        return workers_;
    }

    void run(int n, const std::function<void(int)>& body) {
        if (n <= 0) return;
        std::unique_lock control(control_);
        if (workers_ == 1 || n == 1 || inside_pool_worker) {
            control.unlock();
            for (int i = 0; i < n; ++i) body(i);
            return;
        }
        ensure_threads();
        {
            std::unique_lock lk(m_);
            body_ = &body;
            job_n_ = n;
            next_.store(0, std::memory_order_relaxed);
            active_ = static_cast<int>(threads_.size());
            ++generation_;
        }
        cv_job_.notify_all();
        int i;
        while ((i = next_.fetch_add(1, std::memory_order_relaxed)) < n) body(i);
        std::unique_lock lk(m_);
        cv_done_.wait(lk, [&] { return active_ == 0; });
        body_ = nullptr;
    }

    ~WorkerPool() { stop_threads(); }

private:
    WorkerPool() : workers_(static_cast<int>(std::thread::hardware_concurrency())) {
        if (workers_ < 1) workers_ = 1;
    }

    void ensure_threads() {
        if (!threads_.empty() || workers_ <= 1) return;
        shutdown_ = false;
        for (int t = 0; t < workers_ - 1; ++t)
            threads_.emplace_back([this] { worker_loop(); });
    }

    void stop_threads() {
        {
            std::unique_lock lk(m_);
            shutdown_ = true;
        }
        cv_job_.notify_all();
        for (auto& t : threads_) t.join();
        threads_.clear();
        shutdown_ = false;
    }

    void worker_loop() {
        inside_pool_worker = true;
        std::uint64_t seen = 0;
        std::unique_lock lk(m_);
        while (true) {
            cv_job_.wait(lk, [&] { return shutdown_ || generation_ != seen; });
            if (shutdown_) return;
            seen = generation_;
            const auto* body = body_;
            int n = job_n_;
            lk.unlock();
            int i;
            while ((i = next_.fetch_add(1, std::memory_order_relaxed)) < n) (*body)(i);
            lk.lock();
            if (--active_ == 0) cv_done_.notify_all();
        }
    }

    std::mutex control_;  // serializes top-level run()/set_workers()
    std::mutex m_;
    std::condition_variable cv_job_, cv_done_;
    std::vector<std::thread> threads_;
    const std::function<void(int)>* body_ = nullptr;
    int job_n_ = 0;
    std::atomic<int> next_{0};
    int active_ = 0;
    std::uint64_t generation_ = 0;
    bool shutdown_ = false;
    int workers_ = 1;
};

}  // namespace detail

inline void set_worker_count(int n) { detail::WorkerPool::instance().set_workers(n); }
inline int worker_count() { return detail::WorkerPool::instance().workers(); }

// Runs body(0..n-1). Work items must write disjoint state; reductions belong
// in the caller, in index order.
inline void parallel_for(int n, const std::function<void(int)>& body) {
    detail::WorkerPool::instance().run(n, body);
}

}  // namespace ballseg
