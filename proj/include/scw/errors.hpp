// Copyright 2026 The scw Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace scw {

// Error classes surfaced by the middleware. Every class maps onto one of the
// documented CLI exit codes (see exit_code_for).
enum class errc {
    usage,
    validation,
    wrong_state,
    range,
    conflict,
    auth,
    policy,
    integrity,
    format,
    corruption,
    migration,
    not_found,
    io,
    use_after_close,
    fatal,
};

inline const char* errc_name(errc c) {
    switch (c) {
    case errc::usage: return "usage";
    case errc::validation: return "validation";
    case errc::wrong_state: return "wrong_state";
    case errc::range: return "range";
    case errc::conflict: return "conflict";
    case errc::auth: return "auth";
    case errc::policy: return "policy";
    case errc::integrity: return "integrity";
    case errc::format: return "format";
    case errc::corruption: return "corruption";
    case errc::migration: return "migration";
    case errc::not_found: return "not_found";
    case errc::io: return "io";
    case errc::use_after_close: return "use_after_close";
    case errc::fatal: return "fatal";
    }
    return "unknown";
}

// CLI exit codes: 1 usage, 2 auth, 3 integrity, 4 not-found, 5 I/O.
inline int exit_code_for(errc c) {
    switch (c) {
    case errc::usage:
    case errc::validation:
    case errc::wrong_state:
    case errc::range:
    case errc::conflict:
        return 1;
    case errc::auth:
    case errc::policy:
        return 2;
    case errc::integrity:
    case errc::format:
    case errc::corruption:
    case errc::migration:
        return 3;
    case errc::not_found:
        return 4;
    case errc::io:
    case errc::use_after_close:
    case errc::fatal:
        return 5;
    }
    return 5;
}

class Error : public std::runtime_error {
public:
    Error(errc code, const std::string& msg)
        : std::runtime_error(msg), code_(code) {}

    errc code() const noexcept { return code_; }
    int exit_code() const noexcept { return exit_code_for(code_); }

private:
    errc code_;
};

#define SCW_DEFINE_ERROR(Name, Code)                                          \
    class Name : public Error {                                               \
    public:                                                                    \
        explicit Name(const std::string& msg) : Error(Code, msg) {}           \
    }

SCW_DEFINE_ERROR(UsageError, errc::usage);
SCW_DEFINE_ERROR(ValidationError, errc::validation);
SCW_DEFINE_ERROR(WrongStateError, errc::wrong_state);
SCW_DEFINE_ERROR(RangeError, errc::range);
SCW_DEFINE_ERROR(ConflictError, errc::conflict);
SCW_DEFINE_ERROR(AuthError, errc::auth);
SCW_DEFINE_ERROR(PolicyError, errc::policy);
SCW_DEFINE_ERROR(FormatError, errc::format);
SCW_DEFINE_ERROR(CorruptionError, errc::corruption);
SCW_DEFINE_ERROR(MigrationError, errc::migration);
SCW_DEFINE_ERROR(NotFoundError, errc::not_found);
SCW_DEFINE_ERROR(IoError, errc::io);
SCW_DEFINE_ERROR(UseAfterCloseError, errc::use_after_close);
SCW_DEFINE_ERROR(FatalError, errc::fatal);

#undef SCW_DEFINE_ERROR

inline errc errc_from_name(const std::string& name) {
    for (int c = 0; c <= static_cast<int>(errc::fatal); ++c) {
        if (name == errc_name(static_cast<errc>(c))) return static_cast<errc>(c);
    }
    return errc::fatal;
}

// Rehydrates a typed error from its wire form (code name + message).
[[noreturn]] inline void throw_error(errc code, const std::string& msg) {
    switch (code) {
    case errc::usage: throw UsageError(msg);
    case errc::validation: throw ValidationError(msg);
    case errc::wrong_state: throw WrongStateError(msg);
    case errc::range: throw RangeError(msg);
    case errc::conflict: throw ConflictError(msg);
    case errc::auth: throw AuthError(msg);
    case errc::policy: throw PolicyError(msg);
    case errc::format: throw FormatError(msg);
    case errc::corruption: throw CorruptionError(msg);
    case errc::migration: throw MigrationError(msg);
    case errc::not_found: throw NotFoundError(msg);
    case errc::io: throw IoError(msg);
    case errc::use_after_close: throw UseAfterCloseError(msg);
    case errc::integrity:
    case errc::fatal: break;
    }
    if (code == errc::integrity)
        throw Error(errc::integrity, msg);
    throw FatalError(msg);
}

// Integrity failures carry where they were detected so callers can
// distinguish, e.g., a chunk tag failure from a whole-payload digest mismatch.
class IntegrityError : public Error {
public:
    enum class Kind {
        chunk_auth,      // AEAD tag or AAD mismatch on a sealed chunk
        payload_digest,  // full payload digest mismatch after open
        unwrap,          // asymmetric unwrap failed (wrong or tampered key)
        token_mac,       // attestation token authenticator mismatch
        header_digest,   // image/file header digest mismatch
        channel,         // secure channel frame failed to authenticate
    };

    IntegrityError(Kind kind, const std::string& msg,
                   std::optional<std::uint64_t> chunk = std::nullopt)
        : Error(errc::integrity, msg), kind_(kind), chunk_(chunk) {}

    Kind kind() const noexcept { return kind_; }
    std::optional<std::uint64_t> chunk_index() const noexcept { return chunk_; }

private:
    Kind kind_;
    std::optional<std::uint64_t> chunk_;
};

}  // namespace scw
