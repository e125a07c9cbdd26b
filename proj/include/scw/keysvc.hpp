// Copyright 2026 The scw Authors
// SPDX-License-Identifier: Apache-2.0
//
// Key management service: principals with role- and organisation-based
// access control, keypair issuance, node attestation tokens, time-bounded
// unwrap leases gated by scheduler-issued authorizations, and a gapless
// append-only audit log. Private keys live only inside the service state;
// DEKs are returned over the secure channel and never persisted.

#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "scw/crypto.hpp"
#include "scw/errors.hpp"
#include "scw/io.hpp"
#include "scw/principal.hpp"
#include "scw/serde.hpp"
#include "scw/wire.hpp"

namespace scw {

using Clock = std::function<std::int64_t()>;

inline Clock system_clock() {
    return [] { return static_cast<std::int64_t>(std::time(nullptr)); };
}

// Node identity proof: a keyed authenticator over the node's claimed
// capabilities, issued at registration. Hardware attestation is out of
// scope; the token models its policy surface.
struct AttestationToken {
    std::string node_id;
    bool sev = false;
    std::string domain;
    std::int64_t issued_at = 0;
    Bytes mac;

    json to_json() const {
        return json{{"node_id", node_id},
                    {"sev", sev},
                    {"domain", domain},
                    {"issued_at", issued_at},
                    {"mac", to_hex(mac)}};
    }

    static AttestationToken from_json(const json& j) {
        AttestationToken t;
        t.node_id = j.at("node_id").get<std::string>();
        t.sev = j.at("sev").get<bool>();
        t.domain = j.at("domain").get<std::string>();
        t.issued_at = j.at("issued_at").get<std::int64_t>();
        t.mac = from_hex(j.at("mac").get<std::string>());
        return t;
    }

    Bytes mac_input() const {
        json j{{"domain", domain},
               {"issued_at", issued_at},
               {"node_id", node_id},
               {"sev", sev}};
        std::string s = "scw-attest-v1" + j.dump();
        return Bytes(s.begin(), s.end());
    }
};

enum class LeaseState { active, expired, revoked };

inline const char* lease_state_name(LeaseState s) {
    switch (s) {
    case LeaseState::active: return "active";
    case LeaseState::expired: return "expired";
    case LeaseState::revoked: return "revoked";
    }
    return "?";
}

struct Lease {
    std::string lease_id;
    std::string key_id;
    std::string node_id;
    std::string job_id;
    std::int64_t expires_at = 0;
    bool revoked = false;

    LeaseState state(std::int64_t now) const {
        if (revoked) return LeaseState::revoked;
        return now < expires_at ? LeaseState::active : LeaseState::expired;
    }

    json to_json(std::int64_t now) const {
        return json{{"lease_id", lease_id}, {"key_id", key_id},
                    {"node_id", node_id},   {"job_id", job_id},
                    {"expires_at", expires_at},
                    {"state", lease_state_name(state(now))}};
    }
};

struct AuditEntry {
    std::uint64_t seq = 0;
    std::int64_t timestamp = 0;
    std::string actor;
    std::string action;
    std::string object;
    std::string outcome;

    json to_json() const {
        return json{{"seq", seq},       {"timestamp", timestamp},
                    {"actor", actor},   {"action", action},
                    {"object", object}, {"outcome", outcome}};
    }

    static AuditEntry from_json(const json& j) {
        AuditEntry e;
        e.seq = j.at("seq").get<std::uint64_t>();
        e.timestamp = j.at("timestamp").get<std::int64_t>();
        e.actor = j.at("actor").get<std::string>();
        e.action = j.at("action").get<std::string>();
        e.object = j.at("object").get<std::string>();
        e.outcome = j.at("outcome").get<std::string>();
        return e;
    }
};

struct KeyServiceConfig {
    std::string state_dir;
    Bytes service_secret;                 // control-plane root secret
    std::int64_t token_ttl_seconds = 24 * 3600;
    std::int64_t lease_ttl_seconds = 3600;
    std::string scheduler_principal = "scheduler";
    Clock clock = system_clock();
};

class KeyService {
public:
    explicit KeyService(KeyServiceConfig config) : config_(std::move(config)) {
        if (config_.service_secret.size() < 32)
            throw ValidationError("service secret must be at least 32 bytes");
        io::ensure_dir(config_.state_dir);
        replay_events();
    }

    // -- credentials ---------------------------------------------------------

    // Per-principal credentials are derived from the control-plane secret, so
    // any control-plane service can verify them without state replication.
    Bytes derive_credential(const std::string& principal_name) const {
        std::string label = "scw-cred-v1:" + principal_name;
        return hmac_sha256(config_.service_secret, as_bytes(label));
    }

    std::optional<Bytes> lookup_credential(const std::string& principal_name) const {
        std::lock_guard lock(mutex_);
        if (!principals_.count(principal_name)) return std::nullopt;
        return derive_credential(principal_name);
    }

    // Local bootstrap (not exposed on the wire): installs the initial
    // operator and the scheduler's control principal.
    Bytes bootstrap_principal(const std::string& name, Role role,
                              const std::string& organisation) {
        std::lock_guard lock(mutex_);
        if (!principals_.count(name)) {
            Principal p{name, role, organisation};
            principals_.emplace(name, p);
            append_event("principal", json{{"name", name},
                                           {"role", role_name(role)},
                                           {"organisation", organisation}});
        }
        return derive_credential(name);
    }

    // -- operations ----------------------------------------------------------

    json create_principal(const std::string& actor, const std::string& name,
                          Role role, const std::string& organisation) {
        std::lock_guard lock(mutex_);
        return guarded(actor, "principal_create", name, [&] {
            require_role(actor, Role::operator_role);
            if (principals_.count(name))
                throw ConflictError("principal exists: " + name);
            principals_.emplace(name, Principal{name, role, organisation});
            append_event("principal", json{{"name", name},
                                           {"role", role_name(role)},
                                           {"organisation", organisation}});
            return json{{"name", name},
                        {"role", role_name(role)},
                        {"organisation", organisation},
                        {"credential", to_hex(derive_credential(name))}};
        });
    }

    json issue_keypair(const std::string& actor) {
        std::lock_guard lock(mutex_);
        return guarded(actor, "key_issue", "", [&] {
            require_role(actor, Role::user);
            KeyPair kp = generate_keypair();
            KeyRecord rec;
            rec.key_id = kp.key_id;
            rec.owner = actor;
            rec.public_pem = kp.public_part.to_pem();
            rec.private_pem = kp.private_part.to_pem();
            keys_.emplace(rec.key_id, rec);
            append_event("keypair", json{{"key_id", rec.key_id},
                                         {"owner", rec.owner},
                                         {"public_pem", rec.public_pem},
                                         {"private_pem", rec.private_pem}});
            return json{{"key_id", rec.key_id}, {"public_pem", rec.public_pem}};
        });
    }

    json get_pubkey(const std::string& actor, const std::string& key_id) {
        std::lock_guard lock(mutex_);
        return guarded(actor, "key_get_pub", key_id, [&] {
            require_known(actor);
            auto it = keys_.find(key_id);
            if (it == keys_.end()) throw NotFoundError("unknown key: " + key_id);
            return json{{"key_id", key_id}, {"public_pem", it->second.public_pem}};
        });
    }

    json register_node(const std::string& actor, const std::string& node_id,
                       bool sev, const std::string& domain) {
        std::lock_guard lock(mutex_);
        return guarded(actor, "node_register", node_id, [&] {
            require_role(actor, Role::operator_role);
            if (principals_.count(node_id))
                throw ConflictError("node already registered: " + node_id);
            principals_.emplace(node_id, Principal{node_id, Role::node, domain});
            append_event("principal", json{{"name", node_id},
                                           {"role", "node"},
                                           {"organisation", domain}});
            AttestationToken token;
            token.node_id = node_id;
            token.sev = sev;
            token.domain = domain;
            token.issued_at = config_.clock();
            token.mac = hmac_sha256(config_.service_secret, token.mac_input());
            return json{{"token", token.to_json()},
                        {"credential", to_hex(derive_credential(node_id))}};
        });
    }

    void verify_token(const AttestationToken& token) const {
        Bytes expected = hmac_sha256(config_.service_secret, token.mac_input());
        if (token.mac.size() != expected.size() ||
            CRYPTO_memcmp(token.mac.data(), expected.data(), expected.size()) != 0)
            throw IntegrityError(IntegrityError::Kind::token_mac,
                                 "attestation token authenticator mismatch");
        std::int64_t now = config_.clock();
        if (now - token.issued_at > config_.token_ttl_seconds)
            throw AuthError("attestation token expired");
        if (token.issued_at > now + 60)
            throw AuthError("attestation token issued in the future");
    }

    json authorize_job(const std::string& actor, const std::string& job_id,
                       const std::vector<std::string>& node_ids,
                       const std::vector<std::string>& key_ids,
                       const std::string& security_level) {
        std::lock_guard lock(mutex_);
        return guarded(actor, "job_authorize", job_id, [&] {
            require_role(actor, Role::operator_role);
            if (actor != config_.scheduler_principal)
                throw AuthError("only the scheduler principal may authorize jobs");
            for (const auto& key_id : key_ids)
                if (!keys_.count(key_id))
                    throw NotFoundError("unknown key: " + key_id);
            Grant grant;
            grant.nodes.insert(node_ids.begin(), node_ids.end());
            grant.keys.insert(key_ids.begin(), key_ids.end());
            grant.sev_required = security_level == "sev";
            grants_[job_id] = grant;
            append_event("grant", json{{"job_id", job_id},
                                       {"nodes", node_ids},
                                       {"keys", key_ids},
                                       {"security_level", security_level}});
            return json{{"job_id", job_id}, {"authorized", true}};
        });
    }

    // Returns the DEK (over the secure channel only) plus the recorded lease.
    json request_unwrap(const std::string& actor, const AttestationToken& token,
                        const WrappedKey& wrapped, DekPurpose purpose,
                        const std::string& job_id) {
        std::lock_guard lock(mutex_);
        return guarded(actor, "key_unwrap", wrapped.key_id + "/" + job_id, [&] {
            require_role(actor, Role::node);
            verify_token(token);
            if (token.node_id != actor)
                throw AuthError("token does not belong to the requesting node");

            if (revocations_.count(revocation_key(actor, job_id, wrapped.key_id)))
                throw AuthError("authorization revoked for this node/job/key");

            auto git = grants_.find(job_id);
            if (git == grants_.end() || !git->second.nodes.count(actor) ||
                !git->second.keys.count(wrapped.key_id))
                throw AuthError("no authorization for (node, job, key)");

            if (git->second.sev_required && !token.sev)
                throw PolicyError("job requires sev capability the node lacks");

            auto kit = keys_.find(wrapped.key_id);
            if (kit == keys_.end())
                throw NotFoundError("unknown key: " + wrapped.key_id);
            PrivateKey priv = PrivateKey::from_pem(kit->second.private_pem);
            Dek dek = unwrap_dek(wrapped, priv, purpose);

            Lease lease;
            lease.lease_id = uuid4();
            lease.key_id = wrapped.key_id;
            lease.node_id = actor;
            lease.job_id = job_id;
            lease.expires_at = config_.clock() + config_.lease_ttl_seconds;
            leases_.emplace(lease.lease_id, lease);
            append_event("lease", lease.to_json(config_.clock()));

            json out{{"dek", to_hex(dek.bytes())},
                     {"purpose", dek_purpose_name(purpose)},
                     {"lease", lease.to_json(config_.clock())}};
            dek.destroy();
            return out;
        });
    }

    json revoke_lease(const std::string& actor, const std::string& lease_id) {
        std::lock_guard lock(mutex_);
        return guarded(actor, "lease_revoke", lease_id, [&] {
            require_role(actor, Role::operator_role);
            auto it = leases_.find(lease_id);
            if (it == leases_.end())
                throw NotFoundError("unknown lease: " + lease_id);
            it->second.revoked = true;
            revocations_.insert(revocation_key(it->second.node_id,
                                               it->second.job_id,
                                               it->second.key_id));
            append_event("lease_revoke", json{{"lease_id", lease_id}});
            return json{{"lease_id", lease_id}, {"state", "revoked"}};
        });
    }

    json audit_query(const std::string& actor) {
        std::lock_guard lock(mutex_);
        return guarded(actor, "audit_query", "", [&] {
            require_role(actor, Role::operator_role);
            json entries = json::array();
            for (const AuditEntry& e : audit_) entries.push_back(e.to_json());
            return json{{"entries", entries}};
        });
    }

    // -- introspection (local, used by tests and the daemons) ----------------

    std::vector<AuditEntry> audit_entries() const {
        std::lock_guard lock(mutex_);
        return audit_;
    }

    std::optional<Principal> find_principal(const std::string& name) const {
        std::lock_guard lock(mutex_);
        auto it = principals_.find(name);
        if (it == principals_.end()) return std::nullopt;
        return it->second;
    }

    std::optional<Lease> find_lease(const std::string& lease_id) const {
        std::lock_guard lock(mutex_);
        auto it = leases_.find(lease_id);
        if (it == leases_.end()) return std::nullopt;
        return it->second;
    }

    PublicKey public_key(const std::string& key_id) const {
        std::lock_guard lock(mutex_);
        auto it = keys_.find(key_id);
        if (it == keys_.end()) throw NotFoundError("unknown key: " + key_id);
        return PublicKey::from_pem(it->second.public_pem);
    }

    const KeyServiceConfig& config() const { return config_; }

    void save_snapshot() {
        std::lock_guard lock(mutex_);
        json snap{{"note", "derived snapshot; events.jsonl is authoritative"},
                  {"principals", json::array()},
                  {"keys", json::array()},
                  {"audit_seq", next_seq_ - 1}};
        for (const auto& [name, p] : principals_)
            snap["principals"].push_back(json{{"name", name},
                                              {"role", role_name(p.role)},
                                              {"organisation", p.organisation}});
        for (const auto& [id, k] : keys_)
            snap["keys"].push_back(json{{"key_id", id}, {"owner", k.owner}});
        std::string s = snap.dump(2);
        io::write_file_atomic(config_.state_dir + "/snapshot.json", as_bytes(s));
    }

private:
    struct KeyRecord {
        std::string key_id;
        std::string owner;
        std::string public_pem;
        std::string private_pem;
    };

    struct Grant {
        std::set<std::string> nodes;
        std::set<std::string> keys;
        bool sev_required = false;
    };

    static std::string revocation_key(const std::string& node, const std::string& job,
                                      const std::string& key) {
        return node + "\x1f" + job + "\x1f" + key;
    }

    void require_known(const std::string& actor) const {
        if (!principals_.count(actor))
            throw AuthError("unknown principal: " + actor);
    }

    void require_role(const std::string& actor, Role role) const {
        auto it = principals_.find(actor);
        if (it == principals_.end())
            throw AuthError("unknown principal: " + actor);
        if (it->second.role != role)
            throw AuthError(std::string("operation requires role ") + role_name(role));
    }

    // Runs one operation, appending exactly one audit entry whether it
    // succeeds or is denied.
    template <typename Fn>
    json guarded(const std::string& actor, const std::string& action,
                 const std::string& object, Fn&& fn) {
        try {
            json out = fn();
            append_audit(actor, action, object, "ok");
            return out;
        } catch (const Error& e) {
            append_audit(actor, action, object,
                         std::string("denied:") + errc_name(e.code()));
            throw;
        }
    }

    void append_audit(const std::string& actor, const std::string& action,
                      const std::string& object, const std::string& outcome) {
        AuditEntry entry;
        entry.seq = next_seq_++;
        entry.timestamp = config_.clock();
        entry.actor = actor;
        entry.action = action;
        entry.object = object;
        entry.outcome = outcome;
        audit_.push_back(entry);
        append_event("audit", entry.to_json());
    }

    void append_event(const std::string& type, const json& data) {
        json event{{"type", type}, {"data", data}};
        io::append_line(config_.state_dir + "/events.jsonl", event.dump());
    }

    void replay_events() {
        std::string path = config_.state_dir + "/events.jsonl";
        if (!std::filesystem::exists(path)) return;
        std::string content = to_string(io::read_file(path));
        std::size_t pos = 0;
        while (pos < content.size()) {
            std::size_t end = content.find('\n', pos);
            if (end == std::string::npos) end = content.size();
            std::string line = content.substr(pos, end - pos);
            pos = end + 1;
            if (line.empty()) continue;
            json event = json::parse(line);
            const std::string type = event.at("type").get<std::string>();
            const json& data = event.at("data");
            if (type == "principal") {
                principals_[data.at("name").get<std::string>()] =
                    Principal{data.at("name").get<std::string>(),
                              role_from_name(data.at("role").get<std::string>()),
                              data.at("organisation").get<std::string>()};
            } else if (type == "keypair") {
                KeyRecord rec;
                rec.key_id = data.at("key_id").get<std::string>();
                rec.owner = data.at("owner").get<std::string>();
                rec.public_pem = data.at("public_pem").get<std::string>();
                rec.private_pem = data.at("private_pem").get<std::string>();
                keys_[rec.key_id] = rec;
            } else if (type == "grant") {
                Grant grant;
                for (const auto& n : data.at("nodes")) grant.nodes.insert(n.get<std::string>());
                for (const auto& k : data.at("keys")) grant.keys.insert(k.get<std::string>());
                grant.sev_required = data.at("security_level").get<std::string>() == "sev";
                grants_[data.at("job_id").get<std::string>()] = grant;
            } else if (type == "lease") {
                Lease lease;
                lease.lease_id = data.at("lease_id").get<std::string>();
                lease.key_id = data.at("key_id").get<std::string>();
                lease.node_id = data.at("node_id").get<std::string>();
                lease.job_id = data.at("job_id").get<std::string>();
                lease.expires_at = data.at("expires_at").get<std::int64_t>();
                leases_[lease.lease_id] = lease;
            } else if (type == "lease_revoke") {
                auto it = leases_.find(data.at("lease_id").get<std::string>());
                if (it != leases_.end()) {
                    it->second.revoked = true;
                    revocations_.insert(revocation_key(it->second.node_id,
                                                       it->second.job_id,
                                                       it->second.key_id));
                }
            } else if (type == "audit") {
                AuditEntry entry = AuditEntry::from_json(data);
                audit_.push_back(entry);
                next_seq_ = entry.seq + 1;
            }
        }
    }

    KeyServiceConfig config_;
    mutable std::mutex mutex_;
    std::map<std::string, Principal> principals_;
    std::map<std::string, KeyRecord> keys_;
    std::map<std::string, Grant> grants_;
    std::map<std::string, Lease> leases_;
    std::set<std::string> revocations_;
    std::vector<AuditEntry> audit_;
    std::uint64_t next_seq_ = 1;
};

// ---------------------------------------------------------------------------
// Wire binding
// ---------------------------------------------------------------------------

class KeyServiceServer {
public:
    KeyServiceServer(KeyService& service, const std::string& host, std::uint16_t port)
        : service_(service),
          server_(host, port,
                  [&service](const std::string& name) {
                      return service.lookup_credential(name);
                  },
                  [this](SecureChannel& ch) { serve(ch); }) {}

    std::uint16_t port() const { return server_.port(); }
    void stop() { server_.stop(); }

private:
    void serve(SecureChannel& ch) {
        while (true) {
            Message m;
            try {
                m = ch.recv();
            } catch (const Error&) {
                return;  // connection ended
            }
            json reply;
            try {
                reply = dispatch(ch.principal(), m);
            } catch (const Error& e) {
                ch.send_json(msg::ERR, json{{"code", errc_name(e.code())},
                                            {"message", e.what()}});
                continue;
            } catch (const json::exception& e) {
                ch.send_json(msg::ERR, json{{"code", "format"},
                                            {"message", e.what()}});
                continue;
            }
            ch.send_json(msg::OK, reply);
        }
    }

    json dispatch(const std::string& actor, const Message& m) {
        json body = m.as_json();
        switch (m.type) {
        case msg::KEY_ISSUE:
            return service_.issue_keypair(actor);
        case msg::KEY_GET_PUB:
            return service_.get_pubkey(actor, body.at("key_id").get<std::string>());
        case msg::NODE_REGISTER:
            return service_.register_node(actor,
                                          body.at("node_id").get<std::string>(),
                                          body.at("sev").get<bool>(),
                                          body.at("domain").get<std::string>());
        case msg::JOB_AUTHORIZE:
            return service_.authorize_job(
                actor, body.at("job_id").get<std::string>(),
                body.at("node_ids").get<std::vector<std::string>>(),
                body.at("key_ids").get<std::vector<std::string>>(),
                body.at("security_level").get<std::string>());
        case msg::KEY_UNWRAP:
            return service_.request_unwrap(
                actor, AttestationToken::from_json(body.at("token")),
                wrapped_key_from_json(body.at("wrapped_key")),
                body.at("purpose").get<std::string>() == "image" ? DekPurpose::image
                                                                 : DekPurpose::bundle,
                body.at("job_id").get<std::string>());
        case msg::AUDIT_QUERY:
            return service_.audit_query(actor);
        case msg::LEASE_REVOKE:
            return service_.revoke_lease(actor, body.at("lease_id").get<std::string>());
        case msg::PRINCIPAL_CREATE:
            return service_.create_principal(
                actor, body.at("name").get<std::string>(),
                role_from_name(body.at("role").get<std::string>()),
                body.at("organisation").get<std::string>());
        default:
            throw FormatError("unknown key service message type");
        }
    }

    KeyService& service_;
    RpcServer server_;
};

class KeyClient {
public:
    KeyClient(const std::string& host, std::uint16_t port, const std::string& principal,
              ByteView credential)
        : channel_(SecureChannel::connect_client(TcpStream::connect(host, port),
                                                 principal, credential)) {}

    json issue_keypair() { return call(msg::KEY_ISSUE, json::object()); }

    PublicKey get_pubkey(const std::string& key_id) {
        json r = call(msg::KEY_GET_PUB, json{{"key_id", key_id}});
        return PublicKey::from_pem(r.at("public_pem").get<std::string>());
    }

    json register_node(const std::string& node_id, bool sev, const std::string& domain) {
        return call(msg::NODE_REGISTER,
                    json{{"node_id", node_id}, {"sev", sev}, {"domain", domain}});
    }

    json authorize_job(const std::string& job_id, const std::vector<std::string>& nodes,
                       const std::vector<std::string>& keys,
                       const std::string& security_level) {
        return call(msg::JOB_AUTHORIZE, json{{"job_id", job_id},
                                             {"node_ids", nodes},
                                             {"key_ids", keys},
                                             {"security_level", security_level}});
    }

    struct UnwrapResult {
        Dek dek;
        json lease;
    };

    UnwrapResult request_unwrap(const AttestationToken& token, const WrappedKey& wrapped,
                                DekPurpose purpose, const std::string& job_id) {
        json r = call(msg::KEY_UNWRAP, json{{"token", token.to_json()},
                                            {"wrapped_key", wrapped_key_to_json(wrapped)},
                                            {"purpose", dek_purpose_name(purpose)},
                                            {"job_id", job_id}});
        Bytes dek_bytes = from_hex(r.at("dek").get<std::string>());
        UnwrapResult out{Dek(SecureBuffer(std::move(dek_bytes)), purpose),
                         r.at("lease")};
        return out;
    }

    json audit_query() { return call(msg::AUDIT_QUERY, json::object()); }

    json revoke_lease(const std::string& lease_id) {
        return call(msg::LEASE_REVOKE, json{{"lease_id", lease_id}});
    }

    json create_principal(const std::string& name, Role role,
                          const std::string& organisation) {
        return call(msg::PRINCIPAL_CREATE, json{{"name", name},
                                                {"role", role_name(role)},
                                                {"organisation", organisation}});
    }

    json call(std::uint8_t type, const json& request) {
        std::lock_guard lock(mutex_);
        return channel_.call(type, request);
    }

private:
    SecureChannel channel_;
    std::mutex mutex_;
};

}  // namespace scw
