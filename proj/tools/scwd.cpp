// Copyright 2026 The scw Authors
// SPDX-License-Identifier: Apache-2.0
//
// scwd: service daemons. `scwd keysvc` runs the key management service (and
// hosts the offline cluster-administration commands), `scwd scheduler` the
// control plane, `scwd worker` a node agent.

#include <atomic>
#include <csignal>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "scw/config.hpp"
#include "scw/keysvc.hpp"
#include "scw/scheduler.hpp"
#include "scw/storage.hpp"
#include "scw/worker.hpp"

using namespace scw;

namespace {

std::atomic<bool> g_stop{false};

void handle_signal(int) { g_stop.store(true); }

void wait_for_signal() {
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    while (!g_stop.load())
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

Bytes load_or_create_secret(const std::string& path, bool allow_create) {
    if (std::filesystem::exists(path))
        return from_hex(to_string(io::read_file(path)));
    if (!allow_create)
        throw UsageError("service secret not found: " + path +
                         " (initialize with `scwd keysvc --init`)");
    Bytes secret = random_bytes(32);
    io::write_file_atomic(path, as_bytes(to_hex(secret)));
    return secret;
}

void write_credential_file(const std::string& dir, const std::string& name,
                           ByteView secret) {
    io::ensure_dir(dir);
    json j{{"name", name}, {"secret", to_hex(secret)}};
    io::write_file_atomic(dir + "/" + name + ".json", as_bytes(j.dump(2)));
}

int run(int argc, char** argv) {
    CLI::App app{"scwd: secure workflow middleware daemons"};
    app.require_subcommand(1);

    // ---- key service ----
    auto* keysvc_cmd = app.add_subcommand("keysvc", "key management service");
    std::string ks_listen = "127.0.0.1:0", ks_state = "keysvc-state";
    bool ks_init = false;
    std::string ks_add_user, ks_user_org = "default";
    bool ks_no_serve = false;
    keysvc_cmd->add_option("--listen", ks_listen, "host:port (port 0 = ephemeral)");
    keysvc_cmd->add_option("--state", ks_state, "state directory");
    keysvc_cmd->add_flag("--init", ks_init, "create secret and control principals");
    keysvc_cmd->add_option("--add-user", ks_add_user,
                           "create a user principal and credential file, then exit");
    keysvc_cmd->add_option("--org", ks_user_org, "organisation for --add-user");
    keysvc_cmd->add_flag("--no-serve", ks_no_serve, "administrative run only");
    keysvc_cmd->callback([&] {
        io::ensure_dir(ks_state);
        Bytes secret = load_or_create_secret(ks_state + "/secret", ks_init);

        KeyServiceConfig config;
        config.state_dir = ks_state;
        config.service_secret = secret;
        KeyService service(config);

        std::string creds_dir = ks_state + "/credentials";
        if (ks_init) {
            Bytes op = service.bootstrap_principal("op", Role::operator_role, "control");
            Bytes sched = service.bootstrap_principal("scheduler", Role::operator_role,
                                                      "control");
            write_credential_file(creds_dir, "op", op);
            write_credential_file(creds_dir, "scheduler", sched);
            std::cout << "initialized key service state in " << ks_state
                      << "; control credentials in " << creds_dir << std::endl;
        }
        if (!ks_add_user.empty()) {
            json created = service.create_principal("op", ks_add_user, Role::user,
                                                    ks_user_org);
            write_credential_file(creds_dir, ks_add_user,
                                  from_hex(created.at("credential").get<std::string>()));
            std::cout << "created user " << ks_add_user << " (org " << ks_user_org
                      << "); credential in " << creds_dir << std::endl;
        }
        if (ks_no_serve) return;

        auto [host, port] = parse_endpoint(ks_listen, true);
        KeyServiceServer server(service, host, port);
        std::cout << "keysvc listening on " << host << ":" << server.port()
                  << std::endl;
        wait_for_signal();
        server.stop();
        service.save_snapshot();
    });

    // ---- scheduler ----
    auto* sched_cmd = app.add_subcommand("scheduler", "control-plane scheduler");
    std::string sc_listen = "127.0.0.1:0", sc_keysvc, sc_state = "scheduler-state";
    std::string sc_secret_file;
    double sc_heartbeat = 5.0, sc_ack = 10.0, sc_run_timeout = 300.0;
    sched_cmd->add_option("--listen", sc_listen, "host:port (port 0 = ephemeral)");
    sched_cmd->add_option("--keysvc", sc_keysvc, "key service endpoint")->required();
    sched_cmd->add_option("--state", sc_state, "state directory");
    sched_cmd->add_option("--secret-file", sc_secret_file,
                          "shared control-plane secret file")->required();
    sched_cmd->add_option("--heartbeat", sc_heartbeat, "node heartbeat interval (s)");
    sched_cmd->add_option("--ack-timeout", sc_ack, "assignment ack timeout (s)");
    sched_cmd->add_option("--run-timeout", sc_run_timeout, "job run timeout (s)");
    sched_cmd->callback([&] {
        Bytes secret = from_hex(to_string(io::read_file(sc_secret_file)));
        auto [ks_host, ks_port] = parse_endpoint(sc_keysvc);
        auto [listen_host, listen_port] = parse_endpoint(sc_listen, true);

        io::ensure_dir(sc_state);
        BlobStore storage(sc_state + "/storage", generate_keypair());

        SchedulerConfig config;
        config.state_dir = sc_state;
        config.listen_host = listen_host;
        config.listen_port = listen_port;
        config.keysvc_host = ks_host;
        config.keysvc_port = ks_port;
        std::string label = "scw-cred-v1:scheduler";
        config.credential = hmac_sha256(secret, as_bytes(label));
        config.service_secret = secret;
        config.heartbeat_interval = sc_heartbeat;
        config.ack_timeout = sc_ack;
        config.run_timeout = sc_run_timeout;

        Scheduler scheduler(config, storage);
        std::cout << "scheduler listening on " << listen_host << ":"
                  << scheduler.port() << std::endl;
        wait_for_signal();
        scheduler.stop();
    });

    // ---- worker ----
    auto* worker_cmd = app.add_subcommand("worker", "node agent");
    std::string wk_node_id, wk_keysvc, wk_scheduler, wk_domain = "default";
    std::string wk_opcred, wk_scratch = "worker-scratch";
    std::uint32_t wk_slots = 4;
    bool wk_sev = false, wk_allow_plain = false;
    double wk_heartbeat = 5.0;
    worker_cmd->add_option("--node-id", wk_node_id)->required();
    worker_cmd->add_option("--keysvc", wk_keysvc, "key service endpoint")->required();
    worker_cmd->add_option("--scheduler", wk_scheduler, "scheduler endpoint")->required();
    worker_cmd->add_option("--slots", wk_slots, "concurrent assignment capacity");
    worker_cmd->add_flag("--sev", wk_sev, "node provides sev memory encryption");
    worker_cmd->add_option("--domain", wk_domain, "organisation/domain");
    worker_cmd->add_option("--operator-credential", wk_opcred,
                           "operator credential file used to register this node")
        ->required();
    worker_cmd->add_option("--scratch", wk_scratch, "scratch directory");
    worker_cmd->add_flag("--allow-plaintext", wk_allow_plain,
                         "accept plaintext control bundles (bench only)");
    worker_cmd->add_option("--heartbeat", wk_heartbeat, "heartbeat interval (s)");
    worker_cmd->callback([&] {
        json opcred = json::parse(to_string(io::read_file(wk_opcred)));
        auto [ks_host, ks_port] = parse_endpoint(wk_keysvc);
        auto [sc_host, sc_port] = parse_endpoint(wk_scheduler);

        NodeProvision provision = provision_node(
            ks_host, ks_port, opcred.at("name").get<std::string>(),
            from_hex(opcred.at("secret").get<std::string>()), wk_node_id, wk_sev,
            wk_domain);

        WorkerConfig config;
        config.node_id = wk_node_id;
        config.keysvc_host = ks_host;
        config.keysvc_port = ks_port;
        config.scheduler_host = sc_host;
        config.scheduler_port = sc_port;
        config.credential = provision.credential;
        config.token = provision.token;
        config.slots = wk_slots;
        config.scratch_dir = wk_scratch;
        config.heartbeat_interval = wk_heartbeat;
        config.allow_plaintext_bundles = wk_allow_plain;

        WorkerAgent agent(config);
        std::cout << "worker " << wk_node_id << " ready (slots " << wk_slots
                  << (wk_sev ? ", sev" : "") << ")" << std::endl;
        wait_for_signal();
        agent.stop();
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const Error& e) {
        std::cerr << "error (" << errc_name(e.code()) << "): " << e.what()
                  << std::endl;
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 5;
    }
}
