// Copyright 2026 The scw Authors
// SPDX-License-Identifier: Apache-2.0

#include "scw/scheduler.hpp"

#include <random>

#include "cluster.hpp"
#include "doctest.h"
#include "scw/worker.hpp"
#include "testutil.hpp"

using namespace scw;

namespace {

std::vector<PolicyNode> nodes_abc() {
    return {{"a", true, 1, true}, {"b", true, 1, false}, {"c", true, 1, true}};
}

Bytes make_echo_bundle(scwtest::TestCluster& cluster, SecurityLevel level,
                       std::string* key_id_out = nullptr) {
    auto [key_id, pub] = cluster.issue_user_key();
    if (key_id_out) *key_id_out = key_id;
    MemoryTree tree;
    tree.files.emplace("input.txt",
                       MemoryFile{Bytes{'h', 'e', 'l', 'l', 'o'}, false});
    PackageOptions opts;
    opts.task_spec.kind = TaskKind::echo;
    opts.security_level = level;
    return package_tree(tree, pub, key_id, opts);
}

}  // namespace

TEST_CASE("round-robin policy follows the cursor definition") {
    SUBCASE("cursor at a, pick 2 of {a,b,c} -> a,b; next cursor c") {
        auto d = select_nodes(nodes_abc(), "a", 2, false);
        REQUIRE(d.has_value());
        CHECK(d->chosen == std::vector<std::string>{"a", "b"});
        CHECK(d->next_cursor == "c");
    }
    SUBCASE("wraps around the ring") {
        auto d = select_nodes(nodes_abc(), "c", 2, false);
        REQUIRE(d.has_value());
        CHECK(d->chosen == std::vector<std::string>{"c", "a"});
        CHECK(d->next_cursor == "b");
    }
    SUBCASE("sev filter skips plain nodes") {
        auto d = select_nodes(nodes_abc(), "a", 2, true);
        REQUIRE(d.has_value());
        CHECK(d->chosen == std::vector<std::string>{"a", "c"});
    }
    SUBCASE("insufficient eligible nodes") {
        CHECK_FALSE(select_nodes(nodes_abc(), "a", 3, true).has_value());
        auto all_dead = nodes_abc();
        for (auto& n : all_dead) n.alive = false;
        CHECK_FALSE(select_nodes(all_dead, "a", 1, false).has_value());
    }
    SUBCASE("cursor past the last id wraps to the start") {
        auto d = select_nodes(nodes_abc(), "zzz", 1, false);
        REQUIRE(d.has_value());
        CHECK(d->chosen == std::vector<std::string>{"a"});
    }
}

TEST_CASE("five single-node jobs over three nodes spread within one") {
    std::vector<PolicyNode> nodes = nodes_abc();
    for (auto& n : nodes) n.free_slots = 100;
    std::string cursor;
    std::map<std::string, int> counts;
    for (int j = 0; j < 5; ++j) {
        auto d = select_nodes(nodes, cursor, 1, false);
        REQUIRE(d.has_value());
        counts[d->chosen[0]]++;
        cursor = d->next_cursor;
    }
    int lo = INT_MAX, hi = 0;
    for (auto& [id, c] : counts) {
        lo = std::min(lo, c);
        hi = std::max(hi, c);
    }
    CHECK(hi - lo <= 1);
}

TEST_CASE("job state machine transition relation") {
    using S = JobState;
    struct Row { S from; S to; bool legal; };
    const Row rows[] = {
        {S::SUBMITTED, S::SCHEDULED, true},  {S::SUBMITTED, S::FAILED, true},
        {S::SUBMITTED, S::RUNNING, false},   {S::SUBMITTED, S::COMPLETED, false},
        {S::SCHEDULED, S::RUNNING, true},    {S::SCHEDULED, S::FAILED, true},
        {S::SCHEDULED, S::COMPLETED, false}, {S::SCHEDULED, S::SUBMITTED, false},
        {S::RUNNING, S::COMPLETED, true},    {S::RUNNING, S::FAILED, true},
        {S::RUNNING, S::SCHEDULED, false},   {S::COMPLETED, S::FAILED, false},
        {S::COMPLETED, S::RUNNING, false},   {S::FAILED, S::SUBMITTED, false},
        {S::FAILED, S::COMPLETED, false},
    };
    for (const Row& r : rows) CHECK(job_transition_legal(r.from, r.to) == r.legal);
}

TEST_CASE("submission validates the bundle before creating a job") {
    scwtest::TestCluster cluster;
    cluster.add_worker("node-a", false);
    auto client = cluster.client();

    SUBCASE("malformed bundle is rejected with no job") {
        Bytes junk = {'X', 'X', 'X', 'X', 0, 1};
        CHECK_THROWS_AS(client.submit(junk, {}, 1, 1, ""), FormatError);
    }
    SUBCASE("zero node count is rejected") {
        Bytes bundle = make_echo_bundle(cluster, SecurityLevel::standard);
        CHECK_THROWS_AS(client.submit(bundle, {}, 0, 1, ""), ValidationError);
    }
    SUBCASE("valid bundle lands in SUBMITTED or beyond") {
        Bytes bundle = make_echo_bundle(cluster, SecurityLevel::standard);
        KeyPair result_keys = generate_keypair();
        std::string job_id = client.submit(bundle, {}, 1, 1,
                                           result_keys.public_part.to_pem());
        json view = client.status(job_id);
        CHECK(view.at("job_id") == job_id);
        std::string state = view.at("state").get<std::string>();
        bool known = state == "SUBMITTED" || state == "SCHEDULED" ||
                     state == "RUNNING" || state == "COMPLETED";
        CHECK(known);
    }
    SUBCASE("status of an unknown job") {
        CHECK_THROWS_AS(client.status("nope"), NotFoundError);
    }
}

TEST_CASE("echo job completes across two nodes and three procs") {
    scwtest::TestCluster cluster;
    cluster.add_worker("node-a", false);
    cluster.add_worker("node-b", false);
    auto client = cluster.client();

    MemoryTree tree;
    for (int i = 0; i < 7; ++i)
        tree.files.emplace("f" + std::to_string(i) + ".bin",
                           MemoryFile{Bytes(static_cast<std::size_t>(10 + i),
                                            static_cast<std::uint8_t>(i)),
                                      false});
    auto [key_id, pub] = cluster.issue_user_key();
    PackageOptions opts;
    opts.task_spec.kind = TaskKind::echo;
    Bytes bundle = package_tree(tree, pub, key_id, opts);

    KeyPair result_keys = generate_keypair();
    std::string job_id =
        client.submit(bundle, {}, 2, 3, result_keys.public_part.to_pem());
    json view = client.poll_until_terminal(job_id, 30.0);
    REQUIRE(view.at("state") == "COMPLETED");
    CHECK(view.at("result_count") == 2);

    auto fetched = client.fetch(job_id);
    REQUIRE(fetched.sealed_results.size() == 2);
    MemoryTree merged;
    for (const Bytes& sealed : fetched.sealed_results) {
        VerifiedWorkflow wf = unseal_bundle(sealed, result_keys.private_part);
        merged.merge(wf.tree);
    }
    MemoryTree expected = scwtest::local_reference_run(
        opts.task_spec, tree, 6, cluster.dir().sub("oracle-scratch"));
    CHECK(merged == expected);
}

TEST_CASE("fetch on a running or unknown job is refused") {
    scwtest::TestCluster cluster;
    auto client = cluster.client();
    CHECK_THROWS_AS(client.fetch("missing"), NotFoundError);

    cluster.add_worker("node-a", false);
    Bytes bundle = make_echo_bundle(cluster, SecurityLevel::standard);
    KeyPair result_keys = generate_keypair();
    std::string job_id = client.submit(bundle, {}, 1, 1,
                                       result_keys.public_part.to_pem());
    // Immediately after submit the job cannot be COMPLETED yet.
    try {
        client.fetch(job_id);
        // If the tiny echo job already completed, fetch legitimately works.
    } catch (const WrongStateError&) {
    }
    client.poll_until_terminal(job_id, 30.0);
}

TEST_CASE("sev jobs only land on sev nodes") {
    scwtest::TestCluster cluster;
    cluster.add_worker("plain-1", false);
    cluster.add_worker("sev-1", true);
    cluster.add_worker("plain-2", false);
    auto client = cluster.client();

    Bytes bundle = make_echo_bundle(cluster, SecurityLevel::sev);
    KeyPair result_keys = generate_keypair();
    std::string job_id = client.submit(bundle, {}, 1, 1,
                                       result_keys.public_part.to_pem());
    json view = client.poll_until_terminal(job_id, 30.0);
    REQUIRE(view.at("state") == "COMPLETED");
    REQUIRE(view.at("nodes").size() == 1);
    CHECK(view.at("nodes")[0] == "sev-1");
}

TEST_CASE("sev job with no sev nodes fails with no eligible nodes") {
    scwtest::TestCluster cluster;
    cluster.add_worker("plain-1", false);
    cluster.add_worker("plain-2", false);
    auto client = cluster.client();

    Bytes bundle = make_echo_bundle(cluster, SecurityLevel::sev);
    KeyPair result_keys = generate_keypair();
    std::string job_id = client.submit(bundle, {}, 1, 1,
                                       result_keys.public_part.to_pem());
    json view = client.poll_until_terminal(job_id, 30.0);
    CHECK(view.at("state") == "FAILED");
    CHECK(view.at("failure_reason").get<std::string>().find("no eligible nodes") !=
          std::string::npos);
}

TEST_CASE("node death mid-run fails the job with a timeout") {
    scwtest::ClusterOptions options;
    options.heartbeat_interval = 0.15;
    scwtest::TestCluster cluster(options);
    WorkerAgent& victim = cluster.add_worker("node-a", false);
    auto client = cluster.client();

    auto [key_id, pub] = cluster.issue_user_key();
    MemoryTree tree;
    PackageOptions opts;
    opts.task_spec.kind = TaskKind::compute_bench;
    // Several seconds of compute so the node dies mid-run.
    opts.task_spec.parameters = {{"matrix_dim", 192},
                                 {"iterations", 400},
                                 {"seed", 1},
                                 {"factor_rank", 12}};
    Bytes bundle = package_tree(tree, pub, key_id, opts);
    KeyPair result_keys = generate_keypair();
    std::string job_id = client.submit(bundle, {}, 1, 1,
                                       result_keys.public_part.to_pem());

    // Wait for RUNNING, then sever the node's link.
    double deadline = task_detail::now_seconds() + 20.0;
    while (task_detail::now_seconds() < deadline) {
        if (client.status(job_id).at("state") == "RUNNING") break;
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    double t_kill = task_detail::now_seconds();
    victim.sever_connection();

    json view = client.poll_until_terminal(job_id, 30.0);
    double detect_latency = task_detail::now_seconds() - t_kill;
    CHECK(view.at("state") == "FAILED");
    CHECK(view.at("failure_reason").get<std::string>().find("timeout") !=
          std::string::npos);
    // Within 3 heartbeat intervals plus sweep slack.
    CHECK(detect_latency < 3 * options.heartbeat_interval + 1.5);
}

TEST_CASE("rank ranges partition the world exactly") {
    scwtest::TestCluster cluster;
    cluster.add_worker("node-a", false);
    cluster.add_worker("node-b", false);
    cluster.add_worker("node-c", false);
    auto client = cluster.client();

    auto [key_id, pub] = cluster.issue_user_key();
    MemoryTree tree;
    for (int i = 0; i < 12; ++i)
        tree.files.emplace("f" + std::to_string(i),
                           MemoryFile{Bytes{static_cast<std::uint8_t>(i)}, false});
    PackageOptions opts;
    opts.task_spec.kind = TaskKind::transform;
    opts.task_spec.parameters = {{"delta", 3}};
    Bytes bundle = package_tree(tree, pub, key_id, opts);
    KeyPair result_keys = generate_keypair();
    std::string job_id = client.submit(bundle, {}, 3, 2,
                                       result_keys.public_part.to_pem());
    json view = client.poll_until_terminal(job_id, 30.0);
    REQUIRE(view.at("state") == "COMPLETED");

    // The union of per-node outputs equals a local world-6 run: only true if
    // the rank ranges partition [0, 6) exactly.
    auto fetched = client.fetch(job_id);
    MemoryTree merged;
    for (const Bytes& sealed : fetched.sealed_results)
        merged.merge(unseal_bundle(sealed, result_keys.private_part).tree);
    MemoryTree expected = scwtest::local_reference_run(
        opts.task_spec, tree, 6, cluster.dir().sub("oracle-scratch"));
    CHECK(merged == expected);
    CHECK(merged.files.size() == 12);
}

TEST_CASE("property: policy oracle agreement over random clusters") {
    std::mt19937_64 rng(2024);
    // Independent re-derivation of the policy: filter, sort, walk the ring
    // from the cursor, emit n nodes, cursor moves one past the last pick.
    auto oracle = [](std::vector<PolicyNode> nodes, const std::string& cursor,
                     std::uint32_t count, bool sev)
        -> std::optional<std::vector<std::string>> {
        std::vector<std::string> ring;
        std::sort(nodes.begin(), nodes.end(),
                  [](const PolicyNode& x, const PolicyNode& y) {
                      return x.node_id < y.node_id;
                  });
        for (const auto& n : nodes)
            if (n.alive && n.free_slots > 0 && (!sev || n.sev))
                ring.push_back(n.node_id);
        if (count == 0 || ring.size() < count) return std::nullopt;
        std::size_t start = ring.size();
        for (std::size_t i = 0; i < ring.size(); ++i)
            if (ring[i] >= cursor) {
                start = i;
                break;
            }
        if (start == ring.size()) start = 0;
        std::vector<std::string> out;
        for (std::uint32_t i = 0; i < count; ++i)
            out.push_back(ring[(start + i) % ring.size()]);
        return out;
    };

    for (int trial = 0; trial < 300; ++trial) {
        std::vector<PolicyNode> nodes;
        std::size_t n = 1 + rng() % 8;
        for (std::size_t i = 0; i < n; ++i)
            nodes.push_back(PolicyNode{"n" + std::to_string(rng() % 20),
                                       (rng() % 4) != 0,
                                       static_cast<std::uint32_t>(rng() % 3),
                                       (rng() % 2) == 0});
        std::sort(nodes.begin(), nodes.end(),
                  [](const PolicyNode& x, const PolicyNode& y) {
                      return x.node_id < y.node_id;
                  });
        nodes.erase(std::unique(nodes.begin(), nodes.end(),
                                [](const PolicyNode& x, const PolicyNode& y) {
                                    return x.node_id == y.node_id;
                                }),
                    nodes.end());
        std::string cursor = "n" + std::to_string(rng() % 20);
        std::uint32_t count = 1 + static_cast<std::uint32_t>(rng() % 4);
        bool sev = (rng() % 2) == 0;

        auto got = select_nodes(nodes, cursor, count, sev);
        auto want = oracle(nodes, cursor, count, sev);
        CHECK(got.has_value() == want.has_value());
        if (got && want) CHECK(got->chosen == *want);
    }
}
