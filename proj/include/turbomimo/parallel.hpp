// SPDX-License-Identifier: Apache-2.0
//
// turbomimo — learned-MMSE channel estimation for 2D massive antenna arrays
// Copyright (C) 2026 turbomimo contributors
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may not use this file except
// in compliance with the License. You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
// Unless required by applicable law or agreed to in writing, software distributed under the License
// is distributed on an "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express
// or implied. See the License for the specific language governing permissions and limitations under
// the License.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace turbomimo {

// Process-wide worker-count setting for Monte-Carlo loops. Numerical results
// are independent of this value by construction (see parallel_block_reduce);
// it only trades wall-clock time.
inline std::atomic<unsigned> &max_threads_setting() {
    static std::atomic<unsigned> value{1};
    return value;
}

inline void set_max_threads(unsigned n) { max_threads_setting().store(n == 0 ? 1u : n); }
inline unsigned max_threads() { return max_threads_setting().load(); }

// Deterministic parallel reduction: [0, n) is cut into fixed-size blocks that
// do not depend on the worker count, each block produces a partial result, and
// the partials are combined sequentially in block order. Any number of workers
// therefore yields bit-identical sums.
template <typename T, typename BlockFn, typename CombineFn>
T parallel_block_reduce(std::size_t n, T init, BlockFn block_fn, CombineFn combine,
                        std::size_t block_size = 1024) {
    if (n == 0)
        return init;
    if (block_size == 0)
        block_size = 1;
    const std::size_t n_blocks = (n + block_size - 1) / block_size;
    const unsigned workers =
        static_cast<unsigned>(std::min<std::size_t>(max_threads(), n_blocks));

    std::vector<T> partials(n_blocks, init);
    if (workers <= 1) {
        for (std::size_t b = 0; b < n_blocks; ++b)
            partials[b] = block_fn(b * block_size, std::min(n, (b + 1) * block_size));
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr error;
        std::atomic<bool> failed{false};
        auto work = [&]() {
            for (;;) {
                const std::size_t b = next.fetch_add(1);
                if (b >= n_blocks || failed.load())
                    return;
                try {
                    partials[b] = block_fn(b * block_size, std::min(n, (b + 1) * block_size));
                } catch (...) {
                    if (!failed.exchange(true))
                        error = std::current_exception();
                    return;
                }
            }
        };
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back(work);
        for (std::thread &t : pool)
            t.join();
        if (failed.load())
            std::rethrow_exception(error);
    }

    T acc = init;
    for (std::size_t b = 0; b < n_blocks; ++b)
        acc = combine(acc, partials[b]);
    return acc;
}

// Parallel for over [0, n) with the same fixed-block decomposition. The body
// must only write to disjoint per-index state.
template <typename BlockFn>
void parallel_block_for(std::size_t n, BlockFn block_fn, std::size_t block_size = 1024) {
    parallel_block_reduce<int>(
        n, 0,
        [&block_fn](std::size_t lo, std::size_t hi) {
            block_fn(lo, hi);
            return 0;
        },
        [](int, int) { return 0; }, block_size);
}

}  // namespace turbomimo
