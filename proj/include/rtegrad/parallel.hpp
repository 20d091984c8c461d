//---------------------------------------------------------------------------//
//! \file parallel.hpp
//! Thread-count independent data parallelism over fixed particle blocks.
//---------------------------------------------------------------------------//
#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace rtegrad
{
//! Particles per work block. Block boundaries never depend on thread count.
inline constexpr std::size_t block_size = 4096;

struct BlockRange
{
    std::size_t begin;
    std::size_t end;
};

inline std::size_t block_count(std::size_t n)
{
    return (n + block_size - 1) / block_size;
}

inline BlockRange block_range(std::size_t block, std::size_t n)
{
    std::size_t const b = block * block_size;
    return {b, std::min(n, b + block_size)};
}

//---------------------------------------------------------------------------//
/*!
 * Run fn(task) for task in [0, tasks) on up to `threads` workers.
 *
 * Tasks must write disjoint outputs; the first exception is rethrown.
 */
template<class F>
void parallel_for(std::size_t tasks, unsigned threads, F&& fn)
{
    unsigned const workers
        = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), tasks));
    if (workers <= 1)
    {
        for (std::size_t t = 0; t < tasks; ++t)
            fn(t);
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto work = [&] {
        for (;;)
        {
            std::size_t const t = next.fetch_add(1);
            if (t >= tasks)
                return;
            try
            {
                fn(t);
            }
            catch (...)
            {
                std::lock_guard lock(error_mutex);
                if (!error)
                    error = std::current_exception();
                next = tasks;
            }
        }
    };
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (unsigned w = 1; w < workers; ++w)
        pool.emplace_back(work);
    work();
    pool.clear();
    if (error)
        std::rethrow_exception(error);
}

//! Parallel loop over the fixed particle blocks of an n-particle ensemble.
template<class F>
void parallel_blocks(std::size_t n, unsigned threads, F&& fn)
{
    parallel_for(block_count(n), threads, [&](std::size_t b) { fn(b, block_range(b, n)); });
}

//---------------------------------------------------------------------------//
/*!
 * Sum per-block partial arrays in a fixed pairwise tree order.
 *
 * The result depends only on the partials, never on thread scheduling.
 */
inline std::vector<double> tree_reduce(std::vector<std::vector<double>> partials)
{
    if (partials.empty())
        return {};
    for (std::size_t stride = 1; stride < partials.size(); stride *= 2)
    {
        for (std::size_t i = 0; i + stride < partials.size(); i += 2 * stride)
        {
            auto& dst = partials[i];
            auto const& src = partials[i + stride];
            for (std::size_t k = 0; k < dst.size(); ++k)
                dst[k] += src[k];
        }
    }
    return std::move(partials.front());
}

}  // namespace rtegrad
