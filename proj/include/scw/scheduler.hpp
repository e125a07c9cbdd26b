// Copyright 2026 The scw Authors
// SPDX-License-Identifier: Apache-2.0
//
// Control-plane service: accepts encrypted job submissions, selects worker
// nodes by deterministic round-robin under capability constraints, dispatches
// assignments over the wire, tracks the job state machine and collects
// sealed results. The scheduler authorizes key release through the key
// service but never handles DEKs itself.

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "scw/bundle.hpp"
#include "scw/errors.hpp"
#include "scw/keysvc.hpp"
#include "scw/storage.hpp"
#include "scw/tasks.hpp"
#include "scw/wire.hpp"

namespace scw {

enum class JobState { SUBMITTED, SCHEDULED, RUNNING, COMPLETED, FAILED };

inline const char* job_state_name(JobState s) {
    switch (s) {
    case JobState::SUBMITTED: return "SUBMITTED";
    case JobState::SCHEDULED: return "SCHEDULED";
    case JobState::RUNNING: return "RUNNING";
    case JobState::COMPLETED: return "COMPLETED";
    case JobState::FAILED: return "FAILED";
    }
    return "?";
}

inline bool job_transition_legal(JobState from, JobState to) {
    switch (from) {
    case JobState::SUBMITTED:
        return to == JobState::SCHEDULED || to == JobState::FAILED;
    case JobState::SCHEDULED:
        return to == JobState::RUNNING || to == JobState::FAILED;
    case JobState::RUNNING:
        return to == JobState::COMPLETED || to == JobState::FAILED;
    case JobState::COMPLETED:
    case JobState::FAILED:
        return false;
    }
    return false;
}

struct Assignment {
    std::string job_id;
    std::string node_id;
    std::uint32_t rank_begin = 0;
    std::uint32_t rank_count = 0;
    std::uint32_t world_size = 0;
    std::string security_level = "standard";
    std::string result_pub_pem;
    std::vector<json> images;  // {blob_id, key_id, sector_count, cipher}

    json to_json() const {
        return json{{"job_id", job_id},
                    {"node_id", node_id},
                    {"rank_begin", rank_begin},
                    {"rank_count", rank_count},
                    {"world_size", world_size},
                    {"security_level", security_level},
                    {"result_pub_pem", result_pub_pem},
                    {"images", images}};
    }

    static Assignment from_json(const json& j) {
        Assignment a;
        a.job_id = j.at("job_id").get<std::string>();
        a.node_id = j.at("node_id").get<std::string>();
        a.rank_begin = j.at("rank_begin").get<std::uint32_t>();
        a.rank_count = j.at("rank_count").get<std::uint32_t>();
        a.world_size = j.at("world_size").get<std::uint32_t>();
        a.security_level = j.value("security_level", "standard");
        a.result_pub_pem = j.value("result_pub_pem", "");
        if (j.contains("images"))
            a.images = j.at("images").get<std::vector<json>>();
        return a;
    }
};

// Pure scheduling policy input: one row per registered node, pre-sorted by
// node id.
struct PolicyNode {
    std::string node_id;
    bool alive = true;
    std::uint32_t free_slots = 0;
    bool sev = false;
};

struct PolicyDecision {
    std::vector<std::string> chosen;
    std::string next_cursor;
};

// Deterministic round-robin over eligible nodes in lexicographic order,
// starting at the persisted cursor. Exposed as a pure function so an
// independent oracle can replay it.
inline std::optional<PolicyDecision> select_nodes(const std::vector<PolicyNode>& sorted_nodes,
                                                  const std::string& cursor,
                                                  std::uint32_t node_count,
                                                  bool sev_required) {
    std::vector<const PolicyNode*> eligible;
    for (const PolicyNode& n : sorted_nodes) {
        if (!n.alive || n.free_slots == 0) continue;
        if (sev_required && !n.sev) continue;
        eligible.push_back(&n);
    }
    if (eligible.size() < node_count || node_count == 0) return std::nullopt;

    std::size_t start = 0;
    while (start < eligible.size() && eligible[start]->node_id < cursor) ++start;
    if (start == eligible.size()) start = 0;

    PolicyDecision d;
    for (std::uint32_t i = 0; i < node_count; ++i)
        d.chosen.push_back(eligible[(start + i) % eligible.size()]->node_id);
    d.next_cursor = eligible[(start + node_count) % eligible.size()]->node_id;
    return d;
}

struct SchedulerConfig {
    std::string state_dir;
    std::string listen_host = "127.0.0.1";
    std::uint16_t listen_port = 0;  // 0: ephemeral
    std::string keysvc_host;
    std::uint16_t keysvc_port = 0;
    std::string principal = "scheduler";
    Bytes credential;        // control-plane credential for the key service
    Bytes service_secret;    // verifies node attestation tokens locally
    double heartbeat_interval = 5.0;
    double ack_timeout = 10.0;
    double run_timeout = 300.0;
    double schedule_grace = 2.0;  // wait this long for eligible nodes to appear
    double driver_interval = 0.02;
    std::int64_t token_ttl_seconds = 24 * 3600;
};

class Scheduler {
public:
    Scheduler(SchedulerConfig config, BlobStore& storage)
        : config_(std::move(config)), storage_(storage) {
        io::ensure_dir(config_.state_dir);
        load_cursor();
        server_.emplace(
            config_.listen_host, config_.listen_port,
            [this](const std::string& name) { return lookup_credential(name); },
            [this](SecureChannel& ch) { serve(ch); });
        driver_ = std::thread([this] { driver_loop(); });
    }

    ~Scheduler() { stop(); }

    std::uint16_t port() const { return server_->port(); }

    void stop() {
        bool expected = false;
        if (!stopping_.compare_exchange_strong(expected, true)) return;
        cv_.notify_all();
        if (driver_.joinable()) driver_.join();
        server_->stop();
    }

    // -- client-facing operations (also used in-process by tests) ------------

    std::string submit(ByteView bundle_bytes, const std::vector<Bytes>& image_files,
                       std::uint32_t node_count, std::uint32_t procs_per_node,
                       const std::string& result_pub_pem, const std::string& submitter) {
        BundleManifest manifest = inspect_bundle(bundle_bytes);  // FormatError on bad bundles
        if (node_count < 1 || procs_per_node < 1)
            throw ValidationError("node_count and procs_per_node must be >= 1");

        Principal store_principal{config_.principal, Role::operator_role, "control"};
        BlobRef bundle_ref = storage_.put(Tier::local, "", bundle_bytes, store_principal);

        JobRecord job;
        job.job_id = uuid4();
        job.bundle_ref = bundle_ref;
        job.node_count = node_count;
        job.procs_per_node = procs_per_node;
        job.security_level = security_level_name(manifest.security_level);
        job.key_id = manifest.key_id;
        job.encrypted = manifest.encrypted();
        job.result_pub_pem = result_pub_pem;
        job.submitter = submitter;
        job.submitted_at = now();

        for (const Bytes& img : image_files) {
            std::size_t header_size = 0;
            ImageHeader h = ImageHeader::decode(img, &header_size);
            BlobRef ref = storage_.put(Tier::local, "", img, store_principal);
            job.image_refs.push_back(ref);
            job.image_meta.push_back(json{{"blob_id", ref.blob_id},
                                          {"key_id", h.wrapped_key.key_id},
                                          {"sector_count", h.sector_count},
                                          {"cipher", xts_cipher_name(h.cipher)}});
        }

        std::lock_guard lock(mutex_);
        std::string job_id = job.job_id;
        order_.push_back(job_id);
        jobs_.emplace(job_id, std::move(job));
        log_event("submit", json{{"job_id", job_id},
                                 {"state", "SUBMITTED"},
                                 {"security_level", jobs_[job_id].security_level}});
        cv_.notify_all();
        return job_id;
    }

    json status(const std::string& job_id) const {
        std::lock_guard lock(mutex_);
        const JobRecord& job = find_job(job_id);
        json nodes = json::array();
        for (const Assignment& a : job.assignments) nodes.push_back(a.node_id);
        json reports = json::object();
        for (const auto& [node, report] : job.reports)
            reports[node] = report.to_json();
        return json{{"job_id", job.job_id},
                    {"state", job_state_name(job.state)},
                    {"failure_reason", job.failure_reason},
                    {"security_level", job.security_level},
                    {"node_count", job.node_count},
                    {"procs_per_node", job.procs_per_node},
                    {"nodes", nodes},
                    {"reports", reports},
                    {"result_count", job.result_refs.size()}};
    }

    std::vector<Bytes> fetch(const std::string& job_id) {
        std::vector<BlobRef> refs;
        {
            std::lock_guard lock(mutex_);
            const JobRecord& job = find_job(job_id);
            if (job.state != JobState::COMPLETED)
                throw WrongStateError("job " + job_id + " is " +
                                      job_state_name(job.state) + ", not COMPLETED");
            refs = job.result_refs;
        }
        Principal store_principal{config_.principal, Role::operator_role, "control"};
        std::vector<Bytes> out;
        for (const BlobRef& ref : refs) out.push_back(storage_.get(ref, store_principal));
        return out;
    }

    // Blocks until the job reaches a terminal state (test convenience).
    JobState wait_terminal(const std::string& job_id, double timeout_seconds) {
        double deadline = now() + timeout_seconds;
        while (now() < deadline) {
            {
                std::lock_guard lock(mutex_);
                const JobRecord& job = find_job(job_id);
                if (job.state == JobState::COMPLETED || job.state == JobState::FAILED)
                    return job.state;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
        throw IoError("timeout waiting for job " + job_id);
    }

    std::vector<std::string> known_nodes() const {
        std::lock_guard lock(mutex_);
        std::vector<std::string> out;
        for (const auto& [id, n] : nodes_) out.push_back(id);
        return out;
    }

    std::string cursor() const {
        std::lock_guard lock(mutex_);
        return cursor_;
    }

private:
    struct JobRecord {
        std::string job_id;
        BlobRef bundle_ref;
        std::vector<BlobRef> image_refs;
        std::vector<json> image_meta;
        std::uint32_t node_count = 1;
        std::uint32_t procs_per_node = 1;
        std::string security_level = "standard";
        std::string key_id;
        bool encrypted = true;
        std::string result_pub_pem;
        std::string submitter;
        JobState state = JobState::SUBMITTED;
        std::string failure_reason;
        std::vector<Assignment> assignments;
        std::set<std::string> acked;
        std::set<std::string> resulted;
        std::map<std::string, ExecutionReport> reports;
        std::vector<BlobRef> result_refs;
        double submitted_at = 0;
        double dispatched_at = 0;
        double started_at = 0;
    };

    struct NodeSession {
        SecureChannel* channel = nullptr;
        std::shared_ptr<std::mutex> write_mutex;
    };

    struct NodeRecord {
        std::string node_id;
        std::string endpoint;
        bool sev = false;
        std::string domain;
        std::uint32_t slots = 1;
        std::uint32_t busy = 0;
        double last_heartbeat = 0;
        bool connected = false;
        NodeSession session;
    };

    static double now() {
        return std::chrono::duration<double>(
                   std::chrono::steady_clock::now().time_since_epoch())
            .count();
    }

    // -- credential and token verification -----------------------------------

    std::optional<Bytes> lookup_credential(const std::string& name) const {
        // All control-plane credentials derive from the shared service secret.
        std::string label = "scw-cred-v1:" + name;
        return hmac_sha256(config_.service_secret, as_bytes(label));
    }

    void verify_node_token(const AttestationToken& token) const {
        std::string label = "scw-attest-v1";
        Bytes expected = hmac_sha256(config_.service_secret, token.mac_input());
        if (token.mac.size() != expected.size() ||
            CRYPTO_memcmp(token.mac.data(), expected.data(), expected.size()) != 0)
            throw IntegrityError(IntegrityError::Kind::token_mac,
                                 "attestation token authenticator mismatch");
        std::int64_t now_s = static_cast<std::int64_t>(std::time(nullptr));
        if (now_s - token.issued_at > config_.token_ttl_seconds)
            throw AuthError("attestation token expired");
    }

    // -- connection handling --------------------------------------------------

    void serve(SecureChannel& ch) {
        while (true) {
            Message m;
            try {
                m = ch.recv();
            } catch (const Error&) {
                on_disconnect(ch);
                return;
            }
            try {
                switch (m.type) {
                case msg::SUBMIT: handle_submit(ch, m); break;
                case msg::STATUS:
                    ch.send_json(msg::OK, status(m.as_json().at("job_id").get<std::string>()));
                    break;
                case msg::FETCH: handle_fetch(ch, m); break;
                case msg::NODE_HELLO: handle_node_hello(ch, m); break;
                case msg::HEARTBEAT: handle_heartbeat(ch, m); break;
                case msg::ASSIGN_ACK: handle_ack(ch, m); break;
                case msg::RESULT: handle_result(ch, m); break;
                case msg::WORKER_ERR: handle_worker_error(ch, m); break;
                default:
                    ch.send_json(msg::ERR, json{{"code", "format"},
                                                {"message", "unknown message type"}});
                }
            } catch (const Error& e) {
                // Request/response messages report errors to the caller; node
                // session messages carry no reply channel.
                if (m.type == msg::SUBMIT || m.type == msg::STATUS ||
                    m.type == msg::FETCH) {
                    ch.send_json(msg::ERR, json{{"code", errc_name(e.code())},
                                                {"message", e.what()}});
                }
            } catch (const json::exception& e) {
                if (m.type == msg::SUBMIT || m.type == msg::STATUS ||
                    m.type == msg::FETCH) {
                    ch.send_json(msg::ERR, json{{"code", "format"},
                                                {"message", e.what()}});
                }
            }
        }
    }

    void handle_submit(SecureChannel& ch, const Message& m) {
        json body = m.as_json();
        std::uint32_t image_count = body.value("image_count", 0u);
        Bytes bundle_bytes = ch.recv_blob();
        std::vector<Bytes> images;
        for (std::uint32_t i = 0; i < image_count; ++i)
            images.push_back(ch.recv_blob());
        std::string job_id = submit(bundle_bytes,
                                    images,
                                    body.at("node_count").get<std::uint32_t>(),
                                    body.at("procs_per_node").get<std::uint32_t>(),
                                    body.value("result_pub_pem", ""),
                                    ch.principal());
        ch.send_json(msg::OK, json{{"job_id", job_id}});
    }

    void handle_fetch(SecureChannel& ch, const Message& m) {
        std::string job_id = m.as_json().at("job_id").get<std::string>();
        std::vector<Bytes> blobs = fetch(job_id);
        json reports;
        {
            std::lock_guard lock(mutex_);
            reports = json::object();
            for (const auto& [node, report] : find_job(job_id).reports)
                reports[node] = report.to_json();
        }
        ch.send_json(msg::OK, json{{"job_id", job_id},
                                   {"count", blobs.size()},
                                   {"reports", reports}});
        for (std::size_t i = 0; i < blobs.size(); ++i)
            ch.send_blob("result-" + std::to_string(i), blobs[i]);
    }

    void handle_node_hello(SecureChannel& ch, const Message& m) {
        json body = m.as_json();
        AttestationToken token = AttestationToken::from_json(body.at("token"));
        verify_node_token(token);
        if (token.node_id != ch.principal())
            throw AuthError("token does not belong to the connected principal");

        std::lock_guard lock(mutex_);
        NodeRecord& node = nodes_[token.node_id];
        node.node_id = token.node_id;
        node.sev = token.sev;
        node.domain = token.domain;
        node.slots = body.value("slots", 1u);
        node.endpoint = body.value("endpoint", "session");
        node.last_heartbeat = now();
        node.connected = true;
        node.session.channel = &ch;
        node.session.write_mutex = std::make_shared<std::mutex>();
        ch.send_json(msg::OK, json{{"registered", true}});
        cv_.notify_all();
    }

    void handle_heartbeat(SecureChannel& ch, const Message&) {
        std::lock_guard lock(mutex_);
        auto it = find_node_by_channel(ch);
        if (it != nodes_.end()) it->second.last_heartbeat = now();
    }

    void handle_ack(SecureChannel& ch, const Message& m) {
        json body = m.as_json();
        std::lock_guard lock(mutex_);
        auto it = jobs_.find(body.at("job_id").get<std::string>());
        if (it == jobs_.end()) return;
        JobRecord& job = it->second;
        job.acked.insert(ch.principal());
        if (job.state == JobState::SCHEDULED &&
            job.acked.size() == job.assignments.size()) {
            transition(job, JobState::RUNNING, "");
            job.started_at = now();
        }
    }

    void handle_result(SecureChannel& ch, const Message& m) {
        json body = m.as_json();
        ExecutionReport report = ExecutionReport::from_json(body.at("report"));
        Bytes sealed = ch.recv_blob();

        Principal store_principal{config_.principal, Role::operator_role, "control"};
        BlobRef ref = storage_.put(Tier::local, "", sealed, store_principal);

        std::lock_guard lock(mutex_);
        auto it = jobs_.find(report.job_id);
        if (it == jobs_.end()) return;
        JobRecord& job = it->second;
        std::string node_id = ch.principal();
        if (job.state != JobState::RUNNING && job.state != JobState::SCHEDULED)
            return;  // late result for a finished/failed job; discard
        job.reports[node_id] = report;
        job.resulted.insert(node_id);
        job.result_refs.push_back(ref);
        release_slot(node_id);
        if (job.resulted.size() == job.assignments.size()) {
            if (job.state == JobState::SCHEDULED) {
                transition(job, JobState::RUNNING, "");  // ack raced the result
                job.started_at = now();
            }
            transition(job, JobState::COMPLETED, "");
        }
    }

    void handle_worker_error(SecureChannel& ch, const Message& m) {
        json body = m.as_json();
        std::lock_guard lock(mutex_);
        auto it = jobs_.find(body.at("job_id").get<std::string>());
        if (it == jobs_.end()) return;
        JobRecord& job = it->second;
        if (job.state == JobState::COMPLETED || job.state == JobState::FAILED) return;
        std::string code = body.value("code", "fatal");
        fail_job(job, code + " on " + ch.principal() + ": " +
                          body.value("message", ""));
        release_slot(ch.principal());
    }

    void on_disconnect(SecureChannel& ch) {
        std::lock_guard lock(mutex_);
        auto it = find_node_by_channel(ch);
        if (it == nodes_.end()) return;
        it->second.connected = false;
        it->second.session.channel = nullptr;
    }

    std::map<std::string, NodeRecord>::iterator find_node_by_channel(SecureChannel& ch) {
        for (auto it = nodes_.begin(); it != nodes_.end(); ++it)
            if (it->second.session.channel == &ch) return it;
        return nodes_.end();
    }

    // -- scheduling and supervision -------------------------------------------

    void driver_loop() {
        while (!stopping_.load()) {
            try {
                schedule_round();
                sweep();
            } catch (const std::exception&) {
                // Supervision must survive transient faults (e.g. key service
                // restarts); affected jobs fail individually.
            }
            std::unique_lock lock(mutex_);
            cv_.wait_for(lock, std::chrono::duration<double>(config_.driver_interval));
        }
    }

    void schedule_round() {
        struct Dispatch {
            Assignment assignment;
            Bytes bundle;
            std::vector<std::pair<json, Bytes>> images;
            SecureChannel* channel;
            std::shared_ptr<std::mutex> write_mutex;
        };
        std::vector<Dispatch> dispatches;
        std::vector<std::pair<std::string, json>> authorizations;

        {
            std::lock_guard lock(mutex_);
            for (const std::string& job_id : order_) {
                JobRecord& job = jobs_[job_id];
                if (job.state != JobState::SUBMITTED) continue;

                std::vector<PolicyNode> policy_nodes;
                for (const auto& [id, node] : nodes_) {
                    policy_nodes.push_back(PolicyNode{
                        id,
                        node.connected &&
                            now() - node.last_heartbeat <= 3 * config_.heartbeat_interval,
                        node.slots > node.busy ? node.slots - node.busy : 0,
                        node.sev});
                }
                auto decision = select_nodes(policy_nodes, cursor_, job.node_count,
                                             job.security_level == "sev");
                if (!decision) {
                    if (now() - job.submitted_at > config_.schedule_grace)
                        fail_job(job, "no eligible nodes");
                    continue;
                }

                cursor_ = decision->next_cursor;
                save_cursor();

                std::uint32_t rank = 0;
                for (const std::string& node_id : decision->chosen) {
                    Assignment a;
                    a.job_id = job.job_id;
                    a.node_id = node_id;
                    a.rank_begin = rank;
                    a.rank_count = job.procs_per_node;
                    a.world_size = job.node_count * job.procs_per_node;
                    a.security_level = job.security_level;
                    a.result_pub_pem = job.result_pub_pem;
                    a.images = job.image_meta;
                    rank += job.procs_per_node;
                    job.assignments.push_back(a);
                    nodes_[node_id].busy += 1;
                }
                transition(job, JobState::SCHEDULED, "");
                job.dispatched_at = now();

                if (job.encrypted) {
                    std::vector<std::string> key_ids{job.key_id};
                    for (const json& meta : job.image_meta)
                        key_ids.push_back(meta.at("key_id").get<std::string>());
                    authorizations.emplace_back(
                        job.job_id, json{{"job_id", job.job_id},
                                         {"node_ids", decision->chosen},
                                         {"key_ids", key_ids},
                                         {"security_level", job.security_level}});
                }

                Principal store_principal{config_.principal, Role::operator_role,
                                          "control"};
                Bytes bundle = storage_.get(job.bundle_ref, store_principal);
                std::vector<std::pair<json, Bytes>> images;
                for (std::size_t i = 0; i < job.image_refs.size(); ++i)
                    images.emplace_back(job.image_meta[i],
                                        storage_.get(job.image_refs[i], store_principal));
                for (const Assignment& a : job.assignments) {
                    NodeRecord& node = nodes_[a.node_id];
                    dispatches.push_back(Dispatch{a, bundle, images,
                                                  node.session.channel,
                                                  node.session.write_mutex});
                }
            }
        }

        // Key release authorization precedes dispatch so workers never race
        // an absent grant.
        for (auto& [job_id, body] : authorizations) {
            try {
                keysvc_client().call(msg::JOB_AUTHORIZE, body);
            } catch (const Error& e) {
                std::lock_guard lock(mutex_);
                auto it = jobs_.find(job_id);
                if (it != jobs_.end())
                    fail_job(it->second, std::string("authorization failed: ") + e.what());
            }
        }

        for (Dispatch& d : dispatches) {
            {
                std::lock_guard lock(mutex_);
                auto it = jobs_.find(d.assignment.job_id);
                if (it == jobs_.end() || it->second.state != JobState::SCHEDULED)
                    continue;
            }
            bool sent = false;
            if (d.channel != nullptr) {
                try {
                    std::lock_guard wlock(*d.write_mutex);
                    d.channel->send_json(msg::ASSIGN, d.assignment.to_json());
                    d.channel->send_blob("bundle", d.bundle);
                    for (auto& [meta, bytes] : d.images)
                        d.channel->send_blob(meta.at("blob_id").get<std::string>(), bytes);
                    sent = true;
                } catch (const Error&) {
                    sent = false;
                }
            }
            if (!sent) {
                std::lock_guard lock(mutex_);
                auto it = jobs_.find(d.assignment.job_id);
                if (it != jobs_.end())
                    fail_job(it->second, "dispatch to " + d.assignment.node_id + " failed");
            }
        }
    }

    void sweep() {
        std::lock_guard lock(mutex_);
        for (const std::string& job_id : order_) {
            JobRecord& job = jobs_[job_id];
            if (job.state == JobState::SCHEDULED &&
                now() - job.dispatched_at > config_.ack_timeout) {
                fail_job(job, "ack timeout");
                continue;
            }
            if (job.state == JobState::RUNNING || job.state == JobState::SCHEDULED) {
                if (job.started_at > 0 && now() - job.started_at > config_.run_timeout) {
                    fail_job(job, "run timeout");
                    continue;
                }
                for (const Assignment& a : job.assignments) {
                    if (job.resulted.count(a.node_id)) continue;
                    auto nit = nodes_.find(a.node_id);
                    bool dead = nit == nodes_.end() || !nit->second.connected ||
                                now() - nit->second.last_heartbeat >
                                    3 * config_.heartbeat_interval;
                    if (dead) {
                        fail_job(job, "timeout: node " + a.node_id + " lost");
                        break;
                    }
                }
            }
        }
    }

    // -- job bookkeeping (mutex held) -----------------------------------------

    JobRecord& find_job(const std::string& job_id) {
        auto it = jobs_.find(job_id);
        if (it == jobs_.end()) throw NotFoundError("unknown job: " + job_id);
        return it->second;
    }
    const JobRecord& find_job(const std::string& job_id) const {
        auto it = jobs_.find(job_id);
        if (it == jobs_.end()) throw NotFoundError("unknown job: " + job_id);
        return it->second;
    }

    void transition(JobRecord& job, JobState to, const std::string& reason) {
        if (!job_transition_legal(job.state, to))
            throw WrongStateError(std::string("illegal transition ") +
                                  job_state_name(job.state) + " -> " +
                                  job_state_name(to));
        job.state = to;
        if (!reason.empty()) job.failure_reason = reason;
        log_event("transition", json{{"job_id", job.job_id},
                                     {"state", job_state_name(to)},
                                     {"reason", reason}});
    }

    void fail_job(JobRecord& job, const std::string& reason) {
        if (job.state == JobState::COMPLETED || job.state == JobState::FAILED) return;
        // Partial results are discarded on failure.
        job.result_refs.clear();
        for (const Assignment& a : job.assignments)
            if (!job.resulted.count(a.node_id)) release_slot(a.node_id);
        transition(job, JobState::FAILED, reason);
    }

    void release_slot(const std::string& node_id) {
        auto it = nodes_.find(node_id);
        if (it != nodes_.end() && it->second.busy > 0) it->second.busy -= 1;
    }

    // -- control-plane client --------------------------------------------------

    KeyClient& keysvc_client() {
        std::lock_guard lock(keysvc_mutex_);
        if (!keysvc_client_) {
            keysvc_client_ = std::make_unique<KeyClient>(
                config_.keysvc_host, config_.keysvc_port, config_.principal,
                config_.credential);
        }
        return *keysvc_client_;
    }

    // -- persistence -----------------------------------------------------------

    void log_event(const std::string& type, const json& data) {
        json event{{"type", type}, {"data", data}};
        io::append_line(config_.state_dir + "/jobs.jsonl", event.dump());
    }

    void save_cursor() {
        io::write_file_atomic(config_.state_dir + "/cursor", as_bytes(cursor_));
    }

    void load_cursor() {
        std::string path = config_.state_dir + "/cursor";
        if (std::filesystem::exists(path)) cursor_ = to_string(io::read_file(path));
    }

    SchedulerConfig config_;
    BlobStore& storage_;
    mutable std::mutex mutex_;
    std::condition_variable cv_;
    std::map<std::string, JobRecord> jobs_;
    std::vector<std::string> order_;
    std::map<std::string, NodeRecord> nodes_;
    std::string cursor_;
    std::optional<RpcServer> server_;
    std::thread driver_;
    std::atomic<bool> stopping_{false};
    std::mutex keysvc_mutex_;
    std::unique_ptr<KeyClient> keysvc_client_;
};

// ---------------------------------------------------------------------------
// Client helper for submit/status/fetch
// ---------------------------------------------------------------------------

class SchedulerClient {
public:
    SchedulerClient(const std::string& host, std::uint16_t port,
                    const std::string& principal, ByteView credential)
        : channel_(SecureChannel::connect_client(TcpStream::connect(host, port),
                                                 principal, credential)) {}

    std::string submit(ByteView bundle, const std::vector<Bytes>& images,
                       std::uint32_t node_count, std::uint32_t procs_per_node,
                       const std::string& result_pub_pem) {
        std::lock_guard lock(mutex_);
        channel_.send_json(msg::SUBMIT, json{{"node_count", node_count},
                                             {"procs_per_node", procs_per_node},
                                             {"image_count", images.size()},
                                             {"result_pub_pem", result_pub_pem}});
        channel_.send_blob("bundle", bundle);
        for (const Bytes& img : images) channel_.send_blob("image", img);
        Message reply = channel_.recv();
        if (reply.type == msg::ERR) {
            json j = reply.as_json();
            throw_error(errc_from_name(j.value("code", "fatal")),
                        j.value("message", "submit failed"));
        }
        return reply.as_json().at("job_id").get<std::string>();
    }

    json status(const std::string& job_id) {
        std::lock_guard lock(mutex_);
        return channel_.call(msg::STATUS, json{{"job_id", job_id}});
    }

    struct FetchResult {
        std::vector<Bytes> sealed_results;
        json reports;
    };

    FetchResult fetch(const std::string& job_id) {
        std::lock_guard lock(mutex_);
        channel_.send_json(msg::FETCH, json{{"job_id", job_id}});
        Message reply = channel_.recv();
        if (reply.type == msg::ERR) {
            json j = reply.as_json();
            throw_error(errc_from_name(j.value("code", "fatal")),
                        j.value("message", "fetch failed"));
        }
        json body = reply.as_json();
        FetchResult out;
        out.reports = body.value("reports", json::object());
        std::size_t count = body.at("count").get<std::size_t>();
        for (std::size_t i = 0; i < count; ++i)
            out.sealed_results.push_back(channel_.recv_blob());
        return out;
    }

    json poll_until_terminal(const std::string& job_id, double timeout_seconds) {
        double deadline = std::chrono::duration<double>(
                              std::chrono::steady_clock::now().time_since_epoch())
                              .count() +
                          timeout_seconds;
        while (true) {
            json view = status(job_id);
            std::string state = view.at("state").get<std::string>();
            if (state == "COMPLETED" || state == "FAILED") return view;
            double t = std::chrono::duration<double>(
                           std::chrono::steady_clock::now().time_since_epoch())
                           .count();
            if (t > deadline) throw IoError("timeout polling job " + job_id);
            std::this_thread::sleep_for(std::chrono::milliseconds(15));
        }
    }

private:
    SecureChannel channel_;
    std::mutex mutex_;
};

}  // namespace scw
