// Copyright 2026 The scw Authors
// SPDX-License-Identifier: Apache-2.0
//
// Node agent. Registers with the key service and the scheduler, heartbeats,
// receives assignments, obtains DEKs via leases, unseals bundles strictly in
// memory, runs the task kernels and returns sealed results. Plaintext
// payloads exist only in volatile memory for the lifetime of one assignment.

#pragma once

#include <atomic>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "scw/bundle.hpp"
#include "scw/dataimage.hpp"
#include "scw/errors.hpp"
#include "scw/keysvc.hpp"
#include "scw/scheduler.hpp"
#include "scw/tasks.hpp"
#include "scw/wire.hpp"

namespace scw {

struct WorkerConfig {
    std::string node_id;
    std::string keysvc_host;
    std::uint16_t keysvc_port = 0;
    std::string scheduler_host;
    std::uint16_t scheduler_port = 0;
    Bytes credential;
    AttestationToken token;
    std::uint32_t slots = 1;
    std::string scratch_dir;
    double heartbeat_interval = 5.0;
    bool allow_plaintext_bundles = false;  // bench control path only
};

// Registers a node with the key service using an operator credential and
// returns the agent configuration material (token + node credential).
struct NodeProvision {
    AttestationToken token;
    Bytes credential;
};

inline NodeProvision provision_node(const std::string& keysvc_host,
                                    std::uint16_t keysvc_port,
                                    const std::string& operator_name,
                                    ByteView operator_credential,
                                    const std::string& node_id, bool sev,
                                    const std::string& domain) {
    KeyClient op(keysvc_host, keysvc_port, operator_name, operator_credential);
    json r = op.register_node(node_id, sev, domain);
    NodeProvision p;
    p.token = AttestationToken::from_json(r.at("token"));
    p.credential = from_hex(r.at("credential").get<std::string>());
    return p;
}

class WorkerAgent {
public:
    explicit WorkerAgent(WorkerConfig config) : config_(std::move(config)) {
        io::ensure_dir(config_.scratch_dir);
        channel_ = std::make_unique<SecureChannel>(SecureChannel::connect_client(
            TcpStream::connect(config_.scheduler_host, config_.scheduler_port),
            config_.node_id, config_.credential));
        {
            std::lock_guard lock(write_mutex_);
            channel_->send_json(msg::NODE_HELLO,
                                json{{"token", config_.token.to_json()},
                                     {"slots", config_.slots},
                                     {"endpoint", config_.node_id}});
        }
        Message reply = channel_->recv();
        if (reply.type != msg::OK)
            throw AuthError("scheduler rejected node registration: " +
                            to_string(reply.body));
        reader_ = std::thread([this] { read_loop(); });
        heartbeat_ = std::thread([this] { heartbeat_loop(); });
    }

    ~WorkerAgent() { stop(); }

    void stop() {
        bool expected = false;
        if (!stopping_.compare_exchange_strong(expected, true)) return;
        channel_->shutdown();
        if (heartbeat_.joinable()) heartbeat_.join();
        if (reader_.joinable()) reader_.join();
        std::vector<std::thread> running;
        {
            std::lock_guard lock(executors_mutex_);
            running.swap(executors_);
        }
        for (auto& t : running)
            if (t.joinable()) t.join();
    }

    const std::string& node_id() const { return config_.node_id; }

    // Simulates sudden node loss: drops the scheduler link (and heartbeats)
    // without waiting for running work.
    void sever_connection() { channel_->shutdown(); }

private:
    void heartbeat_loop() {
        while (!stopping_.load()) {
            std::this_thread::sleep_for(
                std::chrono::duration<double>(config_.heartbeat_interval));
            if (stopping_.load()) break;
            try {
                std::lock_guard lock(write_mutex_);
                channel_->send_json(msg::HEARTBEAT, json{{"node_id", config_.node_id}});
            } catch (const Error&) {
                return;  // connection lost; reader loop handles shutdown
            }
        }
    }

    void read_loop() {
        while (!stopping_.load()) {
            Message m;
            try {
                m = channel_->recv();
            } catch (const Error&) {
                return;
            }
            if (m.type != msg::ASSIGN) continue;
            try {
                Assignment assignment = Assignment::from_json(m.as_json());
                Bytes bundle = channel_->recv_blob();
                std::vector<Bytes> images;
                for (std::size_t i = 0; i < assignment.images.size(); ++i)
                    images.push_back(channel_->recv_blob());
                std::lock_guard lock(executors_mutex_);
                executors_.emplace_back(
                    [this, assignment = std::move(assignment),
                     bundle = std::move(bundle), images = std::move(images)]() mutable {
                        execute_assignment(assignment, bundle, images);
                    });
            } catch (const Error&) {
                return;  // blob transfer failed; connection unusable
            }
        }
    }

    void send_worker_error(const std::string& job_id, const Error& e) {
        try {
            std::lock_guard lock(write_mutex_);
            channel_->send_json(msg::WORKER_ERR,
                                json{{"job_id", job_id},
                                     {"node_id", config_.node_id},
                                     {"code", errc_name(e.code())},
                                     {"message", e.what()}});
        } catch (const Error&) {
        }
    }

    void execute_assignment(const Assignment& assignment, const Bytes& bundle_bytes,
                            const std::vector<Bytes>& image_files) {
        try {
            run_assignment(assignment, bundle_bytes, image_files);
        } catch (const Error& e) {
            send_worker_error(assignment.job_id, e);
        } catch (const std::exception& e) {
            send_worker_error(assignment.job_id, FatalError(e.what()));
        }
    }

    void run_assignment(const Assignment& assignment, const Bytes& bundle_bytes,
                        const std::vector<Bytes>& image_files) {
        BundleManifest manifest = inspect_bundle(bundle_bytes);
        bool sev_bundle = manifest.security_level == SecurityLevel::sev;
        if (sev_bundle && !config_.token.sev)
            throw PolicyError("sev bundle scheduled on a node without sev capability");

        // Ack after validation, before the (possibly long) execution.
        {
            std::lock_guard lock(write_mutex_);
            channel_->send_json(msg::ASSIGN_ACK, json{{"job_id", assignment.job_id},
                                                      {"node_id", config_.node_id}});
        }

        ExecutionReport report;
        report.job_id = assignment.job_id;
        report.node_id = config_.node_id;

        // Decrypt strictly into memory, under a key released by a lease.
        double t0 = task_detail::now_seconds();
        VerifiedWorkflow workflow;
        if (manifest.encrypted()) {
            auto unwrap = keysvc().request_unwrap(config_.token, manifest.wrapped_dek,
                                                  DekPurpose::bundle, assignment.job_id);
            workflow = unseal_bundle_with_dek(bundle_bytes, &unwrap.dek);
            unwrap.dek.destroy();
        } else {
            if (!config_.allow_plaintext_bundles)
                throw FormatError("plaintext bundles are not accepted by this node");
            workflow = unseal_bundle_with_dek(bundle_bytes, nullptr, true);
        }
        report.unseal_seconds = task_detail::now_seconds() - t0;

        TaskResources resources;
        // Scratch is refused for sev workloads: their intermediate state must
        // never leave volatile memory.
        resources.scratch_dir = sev_bundle ? "" : scratch_for(assignment.job_id);
        if (sev_bundle && manifest.task_spec.kind == TaskKind::io_bench &&
            manifest.task_spec.parameters.value("target", "scratch") != "image") {
            workflow.tree.wipe();
            throw PolicyError("sev bundles may not spill to scratch storage");
        }

        std::vector<Dek> image_deks;
        for (std::size_t i = 0; i < image_files.size(); ++i) {
            const json& meta = assignment.images[i];
            std::string path = scratch_for(assignment.job_id) + "/image_" +
                               std::to_string(i) + ".scdi";
            io::ensure_dir(scratch_for(assignment.job_id));
            io::write_file(path, image_files[i]);  // ciphertext by construction
            std::size_t header_size = 0;
            ImageHeader header = ImageHeader::decode(image_files[i], &header_size);
            auto unwrap = keysvc().request_unwrap(config_.token, header.wrapped_key,
                                                  DekPurpose::image, assignment.job_id);
            resources.images.push_back(std::make_shared<ImageHandle>(
                open_image_with_dek(path, unwrap.dek)));
            unwrap.dek.destroy();
            (void)meta;
        }

        t0 = task_detail::now_seconds();
        TaskOutcome outcome =
            run_task(manifest.task_spec, workflow.tree, assignment.world_size,
                     assignment.rank_begin, assignment.rank_count, resources);
        report.exec_seconds = task_detail::now_seconds() - t0;
        workflow.tree.wipe();
        for (auto& img : resources.images) img->close();

        // Seal results to the submitting user's public key.
        t0 = task_detail::now_seconds();
        PackageOptions opts;
        opts.entrypoint = "__result__";
        opts.task_spec.kind = TaskKind::echo;
        opts.security_level = manifest.security_level;
        Bytes sealed;
        if (!assignment.result_pub_pem.empty()) {
            PublicKey result_pub = PublicKey::from_pem(assignment.result_pub_pem);
            sealed = package_tree(outcome.outputs, result_pub,
                                  "result:" + assignment.job_id, opts);
        } else {
            opts.plaintext_payload = true;
            if (!config_.allow_plaintext_bundles)
                throw ValidationError("job carries no result public key");
            sealed = package_tree(outcome.outputs, PublicKey(), "", opts);
        }
        outcome.outputs.wipe();
        report.seal_seconds = task_detail::now_seconds() - t0;

        report.rank_seconds = outcome.rank_seconds;
        report.bytes_read = outcome.bytes_read;
        report.bytes_written = outcome.bytes_written;
        report.io_samples = outcome.io_samples;
        report.outcome = "ok";
        report.result_digest = digest(sealed).hex();

        std::lock_guard lock(write_mutex_);
        channel_->send_json(msg::RESULT, json{{"job_id", assignment.job_id},
                                              {"node_id", config_.node_id},
                                              {"report", report.to_json()}});
        channel_->send_blob("result", sealed);
    }

    std::string scratch_for(const std::string& job_id) {
        return config_.scratch_dir + "/" + job_id;
    }

    KeyClient& keysvc() {
        std::lock_guard lock(keysvc_mutex_);
        if (!keysvc_client_) {
            keysvc_client_ = std::make_unique<KeyClient>(
                config_.keysvc_host, config_.keysvc_port, config_.node_id,
                config_.credential);
        }
        return *keysvc_client_;
    }

    WorkerConfig config_;
    std::unique_ptr<SecureChannel> channel_;
    std::mutex write_mutex_;
    std::thread reader_;
    std::thread heartbeat_;
    std::atomic<bool> stopping_{false};
    std::mutex executors_mutex_;
    std::vector<std::thread> executors_;
    std::mutex keysvc_mutex_;
    std::unique_ptr<KeyClient> keysvc_client_;
};

}  // namespace scw
