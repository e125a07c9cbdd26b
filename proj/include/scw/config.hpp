// Copyright 2026 The scw Authors
// SPDX-License-Identifier: Apache-2.0
//
// Client configuration: file, environment overrides, then command-line
// flags (precedence: flags > env > file).

#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "scw/bytes.hpp"
#include "scw/errors.hpp"
#include "scw/io.hpp"
#include "scw/wire.hpp"

namespace scw {

struct ClientConfig {
    std::string keysvc;      // host:port
    std::string scheduler;   // host:port
    std::string credential;  // path to the credential file
    std::string state_dir;   // local key material and cached identifiers
    std::string level = "standard";

    static std::string default_path() {
        if (const char* env = std::getenv("SCW_CONFIG")) return env;
        if (const char* home = std::getenv("HOME"))
            return std::string(home) + "/.scw/config.json";
        return ".scw/config.json";
    }

    static ClientConfig load(const std::string& path) {
        ClientConfig cfg;
        if (std::filesystem::exists(path)) {
            nlohmann::json j =
                nlohmann::json::parse(to_string(io::read_file(path)));
            cfg.keysvc = j.value("keysvc", "");
            cfg.scheduler = j.value("scheduler", "");
            cfg.credential = j.value("credential", "");
            cfg.state_dir = j.value("state_dir", "");
            cfg.level = j.value("level", "standard");
        }
        if (const char* v = std::getenv("SCW_KEYSVC")) cfg.keysvc = v;
        if (const char* v = std::getenv("SCW_SCHEDULER")) cfg.scheduler = v;
        if (const char* v = std::getenv("SCW_CREDENTIAL")) cfg.credential = v;
        if (const char* v = std::getenv("SCW_STATE_DIR")) cfg.state_dir = v;
        if (const char* v = std::getenv("SCW_LEVEL")) cfg.level = v;
        if (cfg.state_dir.empty())
            cfg.state_dir = std::filesystem::path(path).parent_path().string();
        cfg.validate_endpoints();
        return cfg;
    }

    // Configured endpoints must parse; absent ones are caught on first use.
    void validate_endpoints() const {
        if (!keysvc.empty()) parse_endpoint(keysvc);
        if (!scheduler.empty()) parse_endpoint(scheduler);
    }

    struct Identity {
        std::string name;
        Bytes secret;
    };

    // Missing credentials are an explicit error; there is no anonymous mode.
    Identity load_identity() const {
        if (credential.empty())
            throw AuthError("no credential configured (set credential in the "
                            "config file or SCW_CREDENTIAL)");
        if (!std::filesystem::exists(credential))
            throw AuthError("credential file not found: " + credential);
        nlohmann::json j =
            nlohmann::json::parse(to_string(io::read_file(credential)));
        Identity id;
        id.name = j.at("name").get<std::string>();
        id.secret = from_hex(j.at("secret").get<std::string>());
        return id;
    }
};

}  // namespace scw
