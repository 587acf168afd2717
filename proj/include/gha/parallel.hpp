/*
 * Copyright (c) 2026, The GHA Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <functional>

namespace gha {

/// Process-wide cap on worker threads. 0 means "read GHA_THREADS, else 1".
void set_thread_count(int n);
int thread_count();

/// Runs body(i) for i in [0, n) split into contiguous static chunks.
/// Every index is handled by exactly one call, so callers that write only
/// to slot i get results independent of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                  std::size_t min_chunk = 64);

}  // namespace gha
