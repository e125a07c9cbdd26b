// Copyright 2026 The scw Authors
// SPDX-License-Identifier: Apache-2.0
//
// In-process cluster harness: key service, scheduler and worker agents on
// loopback TCP with shortened timeouts.

#pragma once

#include <memory>
#include <vector>

#include "scw/keysvc.hpp"
#include "scw/scheduler.hpp"
#include "scw/storage.hpp"
#include "scw/worker.hpp"
#include "testutil.hpp"

namespace scwtest {

struct ClusterOptions {
    double heartbeat_interval = 0.15;
    double ack_timeout = 3.0;
    double run_timeout = 120.0;
    double schedule_grace = 1.2;
    bool allow_plaintext_bundles = false;
};

class TestCluster {
public:
    explicit TestCluster(ClusterOptions options = {})
        : options_(options),
          service_secret_(scw::random_bytes(32)),
          keysvc_(scw::KeyServiceConfig{dir_.sub("keysvc"), service_secret_}),
          keysvc_server_(keysvc_, "127.0.0.1", 0),
          storage_(dir_.sub("storage"), scw::generate_keypair()) {
        keysvc_.bootstrap_principal("op", scw::Role::operator_role, "control");
        keysvc_.bootstrap_principal("scheduler", scw::Role::operator_role, "control");
        keysvc_.create_principal("op", "alice", scw::Role::user, "org-a");

        scw::SchedulerConfig scfg;
        scfg.state_dir = dir_.sub("sched");
        scfg.keysvc_host = "127.0.0.1";
        scfg.keysvc_port = keysvc_server_.port();
        scfg.credential = keysvc_.derive_credential("scheduler");
        scfg.service_secret = service_secret_;
        scfg.heartbeat_interval = options.heartbeat_interval;
        scfg.ack_timeout = options.ack_timeout;
        scfg.run_timeout = options.run_timeout;
        scfg.schedule_grace = options.schedule_grace;
        scheduler_ = std::make_unique<scw::Scheduler>(scfg, storage_);
    }

    ~TestCluster() { shutdown(); }

    void shutdown() {
        for (auto& w : workers_) w->stop();
        workers_.clear();
        if (scheduler_) scheduler_->stop();
        keysvc_server_.stop();
    }

    scw::WorkerAgent& add_worker(const std::string& node_id, bool sev,
                                 std::uint32_t slots = 4) {
        auto reg = keysvc_.register_node("op", node_id, sev, "org-a");
        scw::WorkerConfig wcfg;
        wcfg.node_id = node_id;
        wcfg.keysvc_host = "127.0.0.1";
        wcfg.keysvc_port = keysvc_server_.port();
        wcfg.scheduler_host = "127.0.0.1";
        wcfg.scheduler_port = scheduler_->port();
        wcfg.credential = scw::from_hex(reg.at("credential").get<std::string>());
        wcfg.token = scw::AttestationToken::from_json(reg.at("token"));
        wcfg.slots = slots;
        wcfg.scratch_dir = dir_.sub("scratch-" + node_id);
        wcfg.heartbeat_interval = options_.heartbeat_interval;
        wcfg.allow_plaintext_bundles = options_.allow_plaintext_bundles;
        workers_.push_back(std::make_unique<scw::WorkerAgent>(wcfg));
        return *workers_.back();
    }

    // Issues a vault keypair for alice and returns {key_id, pub}.
    std::pair<std::string, scw::PublicKey> issue_user_key() {
        auto issued = keysvc_.issue_keypair("alice");
        return {issued.at("key_id").get<std::string>(),
                scw::PublicKey::from_pem(issued.at("public_pem").get<std::string>())};
    }

    scw::SchedulerClient client(const std::string& principal = "alice") {
        return scw::SchedulerClient("127.0.0.1", scheduler_->port(), principal,
                                    keysvc_.derive_credential(principal));
    }

    scw::KeyService& keysvc() { return keysvc_; }
    scw::Scheduler& scheduler() { return *scheduler_; }
    scw::BlobStore& storage() { return storage_; }
    const TempDir& dir() const { return dir_; }
    std::uint16_t keysvc_port() const { return keysvc_server_.port(); }
    scw::Bytes credential_for(const std::string& name) {
        return keysvc_.derive_credential(name);
    }

private:
    ClusterOptions options_;
    TempDir dir_;
    scw::Bytes service_secret_;
    scw::KeyService keysvc_;
    scw::KeyServiceServer keysvc_server_;
    scw::BlobStore storage_;
    std::unique_ptr<scw::Scheduler> scheduler_;
    std::vector<std::unique_ptr<scw::WorkerAgent>> workers_;
};

// Local single-process reference run of a task over a plaintext tree; the
// oracle for end-to-end output comparisons.
inline scw::MemoryTree local_reference_run(const scw::TaskSpec& spec,
                                           const scw::MemoryTree& input,
                                           std::uint32_t world_size,
                                           const std::string& scratch) {
    scw::TaskResources res;
    res.scratch_dir = scratch;
    scw::TaskOutcome outcome =
        scw::run_task(spec, input, world_size, 0, world_size, res);
    return outcome.outputs;
}

}  // namespace scwtest
