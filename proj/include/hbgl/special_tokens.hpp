// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace hbgl::tokens {

// Reserved vocabulary ids, fixed across every vocabulary.
inline constexpr int kPad = 0;
inline constexpr int kCls = 1;
inline constexpr int kSep = 2;
inline constexpr int kMask = 3;
inline constexpr int kUnk = 4;
inline constexpr int kNumReserved = 5;

}  // namespace hbgl::tokens
