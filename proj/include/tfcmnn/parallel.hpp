#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace tfcmnn {

// Worker count from TFCMNN_THREADS; unset, empty or 0 means serial.
inline std::size_t threads_from_env()
{
    const char* v = std::getenv("TFCMNN_THREADS");
    if ( !v || !*v )
        return 0;
    try
    {
        const long n = std::stol(v);
        return n > 0 ? static_cast<std::size_t>(n) : 0;
    }
    catch ( const std::exception& )
    {
        return 0;
    }
}

// Calls fn(i) for i in [0, n). Each index is handled by exactly one worker;
// callers write results to per-index slots and reduce in index order, which
// keeps results independent of the worker count.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn)
{
    if ( threads <= 1 || n <= 1 )
    {
        for ( std::size_t i = 0; i < n; ++i )
            fn(i);
        return;
    }
    const std::size_t workers = std::min(threads, n);
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for ( std::size_t w = 0; w < workers; ++w )
        pool.emplace_back([&, w] {
            try
            {
                for ( std::size_t i = w; i < n; i += workers )
                    fn(i);
            }
            catch ( ... )
            {
                errors[w] = std::current_exception();
            }
        });
    for ( auto& t : pool )
        t.join();
    for ( auto& e : errors )
        if ( e )
            std::rethrow_exception(e);
}

} // namespace tfcmnn
