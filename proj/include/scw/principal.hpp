// Copyright 2026 The scw Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "scw/errors.hpp"

namespace scw {

enum class Role { user, operator_role, node };

inline const char* role_name(Role r) {
    switch (r) {
    case Role::user: return "user";
    case Role::operator_role: return "operator";
    case Role::node: return "node";
    }
    return "?";
}

inline Role role_from_name(const std::string& name) {
    if (name == "user") return Role::user;
    if (name == "operator") return Role::operator_role;
    if (name == "node") return Role::node;
    throw FormatError("unknown role: " + name);
}

struct Principal {
    std::string name;
    Role role = Role::user;
    std::string organisation;
};

}  // namespace scw
