// Copyright (c) 2026 The FoRA Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace fora {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kVersionString = "fora-0.1.0";

}  // namespace fora
