// Copyright 2026 The scw Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "json.hpp"
#include "scw/crypto.hpp"

namespace scw {

using nlohmann::json;

inline nlohmann::json wrapped_key_to_json(const WrappedKey& wk) {
    return nlohmann::json{{"ciphertext", to_base64(wk.ciphertext)},
                          {"key_id", wk.key_id},
                          {"wrap_algorithm", wk.wrap_algorithm}};
}

inline WrappedKey wrapped_key_from_json(const nlohmann::json& j) {
    WrappedKey wk;
    wk.key_id = j.at("key_id").get<std::string>();
    wk.wrap_algorithm = j.at("wrap_algorithm").get<std::string>();
    wk.ciphertext = from_base64(j.at("ciphertext").get<std::string>());
    return wk;
}

// RFC3339 UTC timestamp with second precision.
inline std::string rfc3339_now() {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace scw
