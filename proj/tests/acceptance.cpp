// Copyright 2026 The scw Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Each test case drives one release criterion end to end
// at its stated tolerance and prints a single PASS/FAIL line.

#include <algorithm>
#include <chrono>
#include <random>
#include <set>

#include "cluster.hpp"
#include "doctest.h"
#include "scw/bench.hpp"
#include "scw/bundle.hpp"
#include "scw/recorder.hpp"
#include "scw/scheduler.hpp"
#include "scw/worker.hpp"
#include "testutil.hpp"

using namespace scw;

namespace {

struct AcceptFail : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void expect(bool cond, const std::string& msg) {
    if (!cond) throw AcceptFail(msg);
}

void criterion(const std::string& id, const std::string& name,
               const std::function<void()>& body) {
    std::string why;
    bool ok = true;
    double t0 = task_detail::now_seconds();
    try {
        body();
    } catch (const std::exception& e) {
        ok = false;
        why = e.what();
    }
    double dt = task_detail::now_seconds() - t0;
    std::printf("[%s] %s %s (%.1fs)%s%s\n", ok ? "PASS" : "FAIL", id.c_str(),
                name.c_str(), dt, why.empty() ? "" : " -- ", why.c_str());
    std::fflush(stdout);
    CHECK_MESSAGE(ok, id, " ", name, ": ", why);
}

double now_s() { return task_detail::now_seconds(); }

MemoryTree fixture_tree(std::mt19937_64& rng, int files, std::size_t max_size) {
    MemoryTree tree;
    tree.dirs.insert("in");
    for (int i = 0; i < files; ++i) {
        MemoryFile f;
        f.data = scwtest::det_bytes(rng, 1 + rng() % max_size);
        tree.files.emplace("in/f" + std::to_string(i) + ".bin", std::move(f));
    }
    return tree;
}

}  // namespace

// ---------------------------------------------------------------------------
// Criterion 1: end-to-end confidentiality lifecycle
// ---------------------------------------------------------------------------

TEST_CASE("C1 end-to-end lifecycle") {
    criterion("C1", "keygen->package->submit(2x3)->execute->fetch equals local run, <30s", [] {
        double t0 = now_s();

        scwtest::TestCluster cluster;
        cluster.add_worker("node-a", false);
        cluster.add_worker("node-b", false);
        auto client = cluster.client();

        // keygen: vault pair for the bundle, local pair for results.
        auto [key_id, pub] = cluster.issue_user_key();
        KeyPair result_keys = generate_keypair();

        std::mt19937_64 rng(20260810);
        MemoryTree tree = fixture_tree(rng, 9, 40000);

        PackageOptions opts;
        opts.task_spec.kind = TaskKind::transform;
        opts.task_spec.parameters = {{"delta", 7}};
        Bytes bundle = package_tree(tree, pub, key_id, opts);

        std::string job_id = client.submit(bundle, {}, 2, 3,
                                           result_keys.public_part.to_pem());
        json view = client.poll_until_terminal(job_id, 25.0);
        expect(view.at("state") == "COMPLETED",
               "job did not complete: " + view.value("failure_reason", "?"));

        auto fetched = client.fetch(job_id);
        expect(fetched.sealed_results.size() == 2, "expected one result per node");
        MemoryTree merged;
        for (const Bytes& sealed : fetched.sealed_results)
            merged.merge(unseal_bundle(sealed, result_keys.private_part).tree);

        MemoryTree reference = scwtest::local_reference_run(
            opts.task_spec, tree, 6, cluster.dir().sub("c1-oracle"));
        expect(merged == reference,
               "distributed outputs differ from the local plaintext run");

        double elapsed = now_s() - t0;
        expect(elapsed < 30.0,
               "lifecycle took " + std::to_string(elapsed) + "s (budget 30s)");
    });
}

// ---------------------------------------------------------------------------
// Criterion 2: tamper suite
// ---------------------------------------------------------------------------

TEST_CASE("C2 tamper suite") {
    criterion("C2", ">=200 single-byte flips across manifest/chunks/wrapped key all fail closed", [] {
        scwtest::TestCluster cluster;
        cluster.add_worker("node-a", false);
        auto client = cluster.client();
        auto [key_id, pub] = cluster.issue_user_key();
        KeyPair result_keys = generate_keypair();

        // A 3-chunk fixture bundle.
        std::mt19937_64 rng(77);
        MemoryTree tree;
        tree.files.emplace("big.bin",
                           MemoryFile{scwtest::det_bytes(rng, 5 * kChunkSize / 2),
                                      false});
        PackageOptions opts;
        opts.task_spec.kind = TaskKind::echo;
        Bytes bundle = package_tree(tree, pub, key_id, opts);
        expect(inspect_bundle(bundle).payload_size > 2 * kChunkSize,
               "fixture must span 3 chunks");

        // Region boundaries inside the encoded container.
        std::size_t manifest_len = get_u32_be(bundle.data() + 6);
        std::size_t manifest_begin = 10;
        std::size_t manifest_end = manifest_begin + manifest_len;
        std::string manifest_str(reinterpret_cast<const char*>(bundle.data()) +
                                     manifest_begin,
                                 manifest_len);
        std::size_t wrapped_pos = manifest_str.find("\"wrapped_dek\"");
        expect(wrapped_pos != std::string::npos, "wrapped key field not found");
        std::size_t wrapped_begin = manifest_begin + wrapped_pos + 30;
        std::size_t wrapped_end = std::min(manifest_end, wrapped_begin + 400);

        std::vector<std::size_t> positions;
        auto sample_region = [&](std::size_t begin, std::size_t end, int count) {
            std::uniform_int_distribution<std::size_t> dist(begin, end - 1);
            for (int i = 0; i < count; ++i) positions.push_back(dist(rng));
        };
        sample_region(0, manifest_begin, 8);              // header fields
        sample_region(manifest_begin, manifest_end, 60);  // manifest JSON
        sample_region(wrapped_begin, wrapped_end, 40);    // wrapped DEK bytes
        sample_region(manifest_end, bundle.size(), 100);  // sealed chunks
        expect(positions.size() >= 200, "need at least 200 sampled positions");

        int detected = 0;
        for (std::size_t pos : positions) {
            Bytes evil = bundle;
            evil[pos] ^= 0x01;
            bool caught = false;
            try {
                std::string job_id = client.submit(evil, {}, 1, 1,
                                                   result_keys.public_part.to_pem());
                json view = client.poll_until_terminal(job_id, 20.0);
                if (view.at("state") == "FAILED") {
                    std::string reason = view.value("failure_reason", "");
                    caught = reason.find("integrity") != std::string::npos ||
                             reason.find("format") != std::string::npos;
                    // Zero plaintext output: results are unavailable.
                    try {
                        client.fetch(job_id);
                        caught = false;
                    } catch (const WrongStateError&) {
                    }
                }
            } catch (const FormatError&) {
                caught = true;  // rejected at submission
            } catch (const Error& e) {
                caught = e.code() == errc::integrity;
            }
            if (caught) ++detected;
        }
        expect(detected == static_cast<int>(positions.size()),
               "detected " + std::to_string(detected) + "/" +
                   std::to_string(positions.size()) + " tampered bundles");
    });
}

// ---------------------------------------------------------------------------
// Criterion 3: XTS correctness
// ---------------------------------------------------------------------------

TEST_CASE("C3 XTS correctness") {
    criterion("C3", "IEEE 1619 known answers exact + 10,000 random sector round-trips", [] {
        Bytes seq(512);
        for (std::size_t i = 0; i < seq.size(); ++i)
            seq[i] = static_cast<std::uint8_t>(i & 0xff);

        {
            Bytes key = from_hex("27182818284590452353602874713526"
                                 "31415926535897932384626433832795");
            XtsCipher cipher(Dek(SecureBuffer(std::move(key)), DekPurpose::image));
            Bytes ct = cipher.encrypt(0, seq);
            expect(to_hex(ct).substr(0, 64) ==
                       "27a7479befa1d476489f308cd4cfa6e2"
                       "a96e4bbe3208ff25287dd3819616e89c",
                   "XTS-AES-128 vector (data unit 0) mismatch");
            expect(to_hex(ct).substr(1024 - 32) ==
                       "0a282df920147beabe421ee5319d0568",
                   "XTS-AES-128 vector tail mismatch");
            expect(cipher.decrypt(0, ct) == seq, "KAT round-trip failed");

            Bytes ct1 = cipher.encrypt(1, seq);
            expect(to_hex(ct1).substr(0, 32) == "bbf9d6a74a7465fee20f42adf9a623fc",
                   "XTS-AES-128 vector (data unit 1) mismatch");
        }
        {
            Bytes key = from_hex(
                "2718281828459045235360287471352662497757247093699959574966967627"
                "3141592653589793238462643383279502884197169399375105820974944592");
            XtsCipher cipher(Dek(SecureBuffer(std::move(key)), DekPurpose::image));
            Bytes ct = cipher.encrypt(0xff, seq);
            expect(to_hex(ct).substr(0, 32) == "1c3b3a102f770386e4836c99e370cf9b",
                   "XTS-AES-256 vector (data unit 0xff) mismatch");
        }

        std::mt19937_64 rng(1619);
        for (XtsCipherKind kind : {XtsCipherKind::xts128, XtsCipherKind::xts256}) {
            Dek key = Dek::generate(DekPurpose::image, xts_key_size(kind));
            XtsCipher cipher(key);
            for (int i = 0; i < 5000; ++i) {
                Bytes sector = scwtest::det_bytes(rng, kSectorSize);
                std::uint64_t index = rng();
                Bytes ct = cipher.encrypt(index, sector);
                expect(ct.size() == sector.size(), "XTS must be length-preserving");
                expect(ct != sector, "ciphertext equals plaintext");
                expect(cipher.decrypt(index, ct) == sector,
                       "random sector round-trip failed");
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Criterion 4: plaintext never at rest
// ---------------------------------------------------------------------------

TEST_CASE("C4 plaintext never at rest") {
    criterion("C4", ">=100 randomized payloads leave no plaintext or DEK window in any write", [] {
        scwtest::TestCluster cluster;
        cluster.add_worker("node-a", false);
        cluster.storage().create_domain("accept-archive", "control");
        auto client = cluster.client();
        auto [key_id, pub] = cluster.issue_user_key();
        KeyPair result_keys = generate_keypair();
        Principal control{"scheduler", Role::operator_role, "control"};

        auto& recorder = WriteRecorder::instance();
        std::mt19937_64 rng(404);
        int violations = 0;
        std::string first_offender;

        for (int round = 0; round < 100; ++round) {
            MemoryTree tree = fixture_tree(rng, 1 + static_cast<int>(rng() % 3),
                                           1 + rng() % (128 * 1024));

            // The bundle is composed here (not via package_tree) so the test
            // knows the DEK bytes it must never observe in a write.
            Bytes archive = pack_tree(tree);
            Dek dek = Dek::generate(DekPurpose::bundle);
            BundleManifest manifest;
            manifest.bundle_id = uuid4();
            manifest.created_at = rfc3339_now();
            manifest.entrypoint = "main";
            manifest.task_spec.kind = TaskKind::transform;
            manifest.task_spec.parameters = {{"delta", 1}};
            manifest.payload_digest = digest(archive);
            manifest.payload_size = archive.size();
            manifest.key_id = key_id;
            manifest.wrapped_dek = wrap_dek(dek, pub, key_id);
            Bytes manifest_bytes = manifest.canonical_bytes();
            auto chunks = seal_payload(archive, dek, digest(manifest_bytes));
            Bytes bundle = bundle_detail::encode_container(manifest_bytes, chunks);

            recorder.start();
            std::string job_id = client.submit(bundle, {}, 1, 1,
                                               result_keys.public_part.to_pem());
            json view = client.poll_until_terminal(job_id, 20.0);
            expect(view.at("state") == "COMPLETED",
                   "round " + std::to_string(round) + " failed: " +
                       view.value("failure_reason", "?"));
            auto fetched = client.fetch(job_id);

            // Exercise the storage migration path with the encrypted bundle.
            BlobRef local_ref = cluster.storage().put(Tier::local, "", bundle, control);
            cluster.storage().migrate(local_ref, "accept-archive", control);

            auto events = recorder.take();
            recorder.stop();
            expect(!events.empty(), "recorder captured no writes");

            SensitiveScanner scanner;
            scanner.add_secret(archive);
            for (const auto& [path, file] : tree.files) scanner.add_secret(file.data);
            scanner.add_secret(dek.bytes());
            // The result DEK (wrapped to the user's key) must stay off disk too.
            BundleManifest result_manifest =
                inspect_bundle(fetched.sealed_results.at(0));
            Dek result_dek = unwrap_dek(result_manifest.wrapped_dek,
                                        result_keys.private_part, DekPurpose::bundle);
            scanner.add_secret(result_dek.bytes());

            std::string offender = scanner.scan(events);
            if (!offender.empty()) {
                ++violations;
                if (first_offender.empty()) first_offender = offender;
            }
        }
        expect(violations == 0,
               std::to_string(violations) + " payloads leaked (first: " +
                   first_offender + ")");
    });
}

// ---------------------------------------------------------------------------
// Criterion 5: access control matrix + audit under concurrency
// ---------------------------------------------------------------------------

TEST_CASE("C5 access control matrix") {
    criterion("C5", ">=24 allow/deny cases exact; audit gapless under 100 concurrent requests", [] {
        scwtest::TempDir dir;
        KeyService svc(KeyServiceConfig{dir.str(), random_bytes(32)});
        svc.bootstrap_principal("op", Role::operator_role, "control");
        svc.bootstrap_principal("scheduler", Role::operator_role, "control");
        svc.create_principal("op", "alice", Role::user, "org-a");
        json issued = svc.issue_keypair("alice");
        std::string key_id = issued.at("key_id");
        PublicKey pub = PublicKey::from_pem(issued.at("public_pem").get<std::string>());
        WrappedKey wrapped = wrap_dek(Dek::generate(DekPurpose::bundle), pub, key_id);

        json sev_node = svc.register_node("op", "sev-node", true, "org-a");
        json plain_node = svc.register_node("op", "plain-node", false, "org-a");
        AttestationToken sev_token =
            AttestationToken::from_json(sev_node.at("token"));
        AttestationToken plain_token =
            AttestationToken::from_json(plain_node.at("token"));

        int cases = 0;
        auto allow = [&](const std::function<void()>& fn, const std::string& what) {
            try {
                fn();
            } catch (const Error& e) {
                throw AcceptFail("expected allow for " + what + ", got " + e.what());
            }
            ++cases;
        };
        auto deny = [&](const std::function<void()>& fn, errc expected,
                        const std::string& what) {
            try {
                fn();
                throw AcceptFail("expected deny for " + what);
            } catch (const Error& e) {
                if (e.code() != expected)
                    throw AcceptFail("wrong error class for " + what + ": " +
                                     errc_name(e.code()));
            }
            ++cases;
        };

        // RBAC: issue (user only).
        allow([&] { svc.issue_keypair("alice"); }, "user issue");
        deny([&] { svc.issue_keypair("op"); }, errc::auth, "operator issue");
        deny([&] { svc.issue_keypair("sev-node"); }, errc::auth, "node issue");
        // get_pub (any known principal), unknown denied.
        allow([&] { svc.get_pubkey("alice", key_id); }, "user get_pub");
        allow([&] { svc.get_pubkey("op", key_id); }, "operator get_pub");
        allow([&] { svc.get_pubkey("sev-node", key_id); }, "node get_pub");
        deny([&] { svc.get_pubkey("stranger", key_id); }, errc::auth, "unknown principal");
        // register (operator only).
        deny([&] { svc.register_node("alice", "x1", false, "o"); }, errc::auth,
             "user register");
        deny([&] { svc.register_node("sev-node", "x2", false, "o"); }, errc::auth,
             "node register");
        allow([&] { svc.register_node("op", "x3", false, "org-a"); }, "operator register");
        deny([&] { svc.register_node("op", "x3", false, "org-a"); }, errc::conflict,
             "duplicate node");
        // authorize (scheduler principal only).
        deny([&] { svc.authorize_job("alice", "j", {"sev-node"}, {key_id}, "standard"); },
             errc::auth, "user authorize");
        deny([&] { svc.authorize_job("op", "j", {"sev-node"}, {key_id}, "standard"); },
             errc::auth, "plain operator authorize");
        allow([&] {
            svc.authorize_job("scheduler", "j-std", {"sev-node", "plain-node"},
                              {key_id}, "standard");
        }, "scheduler authorize");
        deny([&] {
            svc.authorize_job("scheduler", "j2", {"sev-node"}, {"missing"}, "standard");
        }, errc::not_found, "authorize unknown key");
        // unwrap (node only, with grant).
        deny([&] {
            svc.request_unwrap("alice", sev_token, wrapped, DekPurpose::bundle, "j-std");
        }, errc::auth, "user unwrap");
        deny([&] {
            svc.request_unwrap("op", sev_token, wrapped, DekPurpose::bundle, "j-std");
        }, errc::auth, "operator unwrap");
        allow([&] {
            svc.request_unwrap("sev-node", sev_token, wrapped, DekPurpose::bundle,
                               "j-std");
        }, "granted node unwrap");
        deny([&] {
            svc.request_unwrap("sev-node", sev_token, wrapped, DekPurpose::bundle,
                               "other-job");
        }, errc::auth, "unwrap without grant");
        // sev gating: PolicyError distinct from AuthError.
        svc.authorize_job("scheduler", "j-sev", {"sev-node", "plain-node"},
                          {key_id}, "sev");
        deny([&] {
            svc.request_unwrap("plain-node", plain_token, wrapped, DekPurpose::bundle,
                               "j-sev");
        }, errc::policy, "sev bundle on plain node");
        allow([&] {
            svc.request_unwrap("sev-node", sev_token, wrapped, DekPurpose::bundle,
                               "j-sev");
        }, "sev bundle on sev node");
        // token integrity and binding.
        deny([&] {
            AttestationToken forged = plain_token;
            forged.sev = true;
            svc.request_unwrap("plain-node", forged, wrapped, DekPurpose::bundle,
                               "j-sev");
        }, errc::integrity, "forged sev capability");
        deny([&] {
            svc.request_unwrap("plain-node", sev_token, wrapped, DekPurpose::bundle,
                               "j-sev");
        }, errc::auth, "stolen token");
        // audit (operator only).
        allow([&] { svc.audit_query("op"); }, "operator audit");
        deny([&] { svc.audit_query("alice"); }, errc::auth, "user audit");
        deny([&] { svc.audit_query("sev-node"); }, errc::auth, "node audit");

        // Organisation/domain isolation on the storage tier.
        scwtest::TempDir store_dir;
        BlobStore store(store_dir.str(), generate_keypair());
        store.create_domain("dom-a", "org-a");
        store.create_domain("dom-b", "org-b");
        Principal ua{"alice", Role::user, "org-a"};
        Principal ub{"bob", Role::user, "org-b"};
        Bytes blob = {1, 2, 3};
        allow([&] { store.put(Tier::secure, "dom-a", blob, ua); }, "org-a to dom-a");
        deny([&] { store.put(Tier::secure, "dom-b", blob, ua); }, errc::auth,
             "org-a to dom-b");
        deny([&] { store.put(Tier::secure, "dom-a", blob, ub); }, errc::auth,
             "org-b to dom-a");
        allow([&] { store.put(Tier::secure, "dom-b", blob, ub); }, "org-b to dom-b");

        expect(cases >= 24, "only " + std::to_string(cases) + " cases exercised");

        // Audit log gapless under 100 concurrent wire requests.
        KeyServiceServer server(svc, "127.0.0.1", 0);
        std::vector<std::thread> threads;
        std::atomic<int> ok{0};
        for (int t = 0; t < 100; ++t) {
            threads.emplace_back([&, t] {
                try {
                    KeyClient c("127.0.0.1", server.port(), "alice",
                                svc.derive_credential("alice"));
                    c.get_pubkey(key_id);
                    ++ok;
                } catch (const Error&) {
                    (void)t;
                }
            });
        }
        for (auto& th : threads) th.join();
        server.stop();
        expect(ok == 100, "only " + std::to_string(ok.load()) +
                              "/100 concurrent requests succeeded");
        auto entries = svc.audit_entries();
        for (std::size_t i = 1; i < entries.size(); ++i)
            expect(entries[i].seq == entries[i - 1].seq + 1,
                   "audit gap at seq " + std::to_string(entries[i].seq));
    });
}

// ---------------------------------------------------------------------------
// Criterion 6: scheduler policy oracle
// ---------------------------------------------------------------------------

TEST_CASE("C6 scheduler oracle") {
    criterion("C6", "1,000 randomized sequences match the brute-force policy; rank partitions exact", [] {
        std::mt19937_64 rng(6001);

        // Brute-force reimplementation of the published policy.
        auto oracle = [](std::vector<PolicyNode> nodes, const std::string& cursor,
                         std::uint32_t count, bool sev)
            -> std::optional<std::pair<std::vector<std::string>, std::string>> {
            std::sort(nodes.begin(), nodes.end(),
                      [](const PolicyNode& a, const PolicyNode& b) {
                          return a.node_id < b.node_id;
                      });
            std::vector<std::string> ring;
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
            std::vector<std::string> chosen;
            for (std::uint32_t i = 0; i < count; ++i)
                chosen.push_back(ring[(start + i) % ring.size()]);
            return std::make_pair(chosen, ring[(start + count) % ring.size()]);
        };

        int sequences = 0;
        while (sequences < 1000) {
            // Fresh simulated cluster.
            std::map<std::string, PolicyNode> cluster;
            std::size_t n_nodes = 1 + rng() % 7;
            for (std::size_t i = 0; i < n_nodes; ++i) {
                std::string id = "node-" + std::string(1, 'a' + char(rng() % 10));
                cluster[id] = PolicyNode{id, true,
                                         1 + static_cast<std::uint32_t>(rng() % 3),
                                         (rng() % 2) == 0};
            }
            std::string cursor;

            int jobs = 1 + static_cast<int>(rng() % 8);
            for (int j = 0; j < jobs && sequences < 1000; ++j, ++sequences) {
                // Random liveness churn.
                for (auto& [id, node] : cluster)
                    if (rng() % 8 == 0) node.alive = !node.alive;

                std::vector<PolicyNode> sorted;
                for (auto& [id, node] : cluster) sorted.push_back(node);

                std::uint32_t node_count = 1 + static_cast<std::uint32_t>(rng() % 3);
                std::uint32_t procs = 1 + static_cast<std::uint32_t>(rng() % 4);
                bool sev = (rng() % 3) == 0;

                auto got = select_nodes(sorted, cursor, node_count, sev);
                auto want = oracle(sorted, cursor, node_count, sev);
                expect(got.has_value() == want.has_value(),
                       "feasibility disagreement with the oracle");
                if (!got) continue;
                expect(got->chosen == want->first, "node choice disagreement");
                expect(got->next_cursor == want->second, "cursor disagreement");

                // Capability safety: sev jobs never land on plain nodes.
                for (const auto& id : got->chosen)
                    expect(!sev || cluster[id].sev,
                           "sev job scheduled onto a plain node");

                // Rank ranges partition [0, N*P) exactly.
                std::set<std::uint32_t> ranks;
                std::uint32_t begin = 0;
                for (std::size_t a = 0; a < got->chosen.size(); ++a) {
                    for (std::uint32_t r = begin; r < begin + procs; ++r)
                        expect(ranks.insert(r).second, "overlapping rank ranges");
                    begin += procs;
                }
                expect(ranks.size() == node_count * procs &&
                           *ranks.begin() == 0 &&
                           *ranks.rbegin() == node_count * procs - 1,
                       "rank ranges do not cover [0, N*P)");

                // Slot consumption, then random completions free slots.
                for (const auto& id : got->chosen)
                    cluster[id].free_slots -= 1;
                cursor = got->next_cursor;
                for (auto& [id, node] : cluster)
                    if (rng() % 2 == 0 && node.free_slots < 4) node.free_slots += 1;
            }
        }

        // State machine soundness: random event walks never reach an illegal
        // transition unnoticed.
        using S = JobState;
        for (int walk = 0; walk < 2000; ++walk) {
            S state = S::SUBMITTED;
            for (int step = 0; step < 6; ++step) {
                S target = static_cast<S>(rng() % 5);
                bool legal = job_transition_legal(state, target);
                if (legal) {
                    state = target;
                } else {
                    expect(!(state == S::SUBMITTED && target == S::SCHEDULED) &&
                               !(state == S::SCHEDULED && target == S::RUNNING) &&
                               !(state == S::RUNNING &&
                                 (target == S::COMPLETED || target == S::FAILED)) &&
                               !((state == S::SUBMITTED || state == S::SCHEDULED) &&
                                 target == S::FAILED),
                           "legal transition misclassified");
                }
                if (state == S::COMPLETED || state == S::FAILED) break;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Criterion 7: I/O bandwidth grid (structural + qualitative)
// ---------------------------------------------------------------------------

TEST_CASE("C7 io bandwidth grid") {
    criterion("C7", "default io matrix: full 3x{1,10} grid; secure enc vs plain within 15% per cell", [] {
        scwtest::TestCluster cluster;
        cluster.add_worker("node-a", false, /*slots=*/4);
        auto client = cluster.client();
        auto [key_id, pub] = cluster.issue_user_key();
        KeyPair result_keys = generate_keypair();

        BenchContext ctx;
        ctx.client = &client;
        ctx.key_id = key_id;
        ctx.bundle_pub = pub;
        ctx.result_pub_pem = result_keys.public_part.to_pem();
        ctx.result_priv = result_keys.private_part;
        ctx.job_timeout = 600.0;

        BenchMatrix matrix;  // spec defaults: 5 sizes x {1,10} x 3 targets x 5 reps
        BenchReport report = run_io_matrix(ctx, matrix);

        // Structural: the full grid exists with `repetitions` bandwidth rows
        // per cell and no failed cells.
        for (std::uint64_t bs : matrix.block_sizes) {
            for (std::uint32_t procs : matrix.process_counts) {
                for (const std::string& target : matrix.targets) {
                    auto cell = report.stats("io", target, bs, procs,
                                             "bandwidth_mibps");
                    expect(cell.count == static_cast<int>(matrix.repetitions),
                           "missing rows for " + target + " bs=" +
                               std::to_string(bs) + " procs=" +
                               std::to_string(procs));
                    auto bytes = report.stats("io", target, bs, procs,
                                              "bytes_written");
                    expect(static_cast<std::uint64_t>(bytes.mean) ==
                               matrix.cell_total_bytes(bs) * procs,
                           "accounting mismatch in " + target);
                }
            }
        }

        // Report artifacts.
        scwtest::TempDir out;
        json summary = io_overhead_summary(report, matrix, 15.0);
        emit_report(report, out.str(), "io", summary);
        BenchReport parsed = BenchReport::from_csv(
            to_string(io::read_file(out.sub("io_report.csv"))));
        expect(parsed.rows.size() == report.rows.size(), "CSV round-trip lost rows");

        // Qualitative: encryption cost on the secure tier is below 15% in
        // every cell; the summary flags offenders.
        expect(summary.at("cells").size() ==
                   matrix.block_sizes.size() * matrix.process_counts.size(),
               "summary is missing cells");
        std::string offenders;
        for (const auto& cell : summary.at("cells")) {
            if (cell.at("flagged").get<bool>())
                offenders += " bs=" + std::to_string(
                                 cell.at("block_size").get<std::uint64_t>()) +
                             "/p" + std::to_string(cell.at("procs").get<int>()) +
                             "=" + std::to_string(cell.at("diff_pct").get<double>()) +
                             "%";
        }
        expect(offenders.empty(), "cells above 15%:" + offenders);
    });
}

// ---------------------------------------------------------------------------
// Criterion 8: compute execution time (structural + qualitative)
// ---------------------------------------------------------------------------

TEST_CASE("C8 compute execution time") {
    criterion("C8", "procs {1,2,4,8,10}: encrypted-path overhead <10%, outputs identical, workload >=5s", [] {
        scwtest::ClusterOptions options;
        options.allow_plaintext_bundles = true;  // bench control path
        options.run_timeout = 600.0;
        scwtest::TestCluster cluster(options);
        cluster.add_worker("node-a", false, /*slots=*/2);
        auto client = cluster.client();
        auto [key_id, pub] = cluster.issue_user_key();
        KeyPair result_keys = generate_keypair();

        BenchContext ctx;
        ctx.client = &client;
        ctx.key_id = key_id;
        ctx.bundle_pub = pub;
        ctx.result_pub_pem = result_keys.public_part.to_pem();
        ctx.result_priv = result_keys.private_part;
        ctx.job_timeout = 600.0;

        ComputeBenchPlan plan;
        plan.process_counts = {1, 2, 4, 8, 10};
        plan.matrix_dim = 192;
        plan.factor_rank = 12;
        plan.iterations = calibrate_compute_iterations(plan.matrix_dim,
                                                       plan.factor_rank, plan.seed,
                                                       6.0);

        // The criterion requires a >=5s workload; rescale and rerun if the
        // calibration probe underestimated this host.
        BenchReport report;
        BenchReport::CellStats serial;
        for (int attempt = 0; attempt < 3; ++attempt) {
            report = run_compute_matrix(ctx, plan);
            serial = report.stats("compute", "plain_bundle", 0, 1, "wall_seconds");
            if (serial.count > 0 && serial.mean >= 5.0) break;
            double measured = std::max(serial.mean, 0.25);
            plan.iterations = static_cast<std::uint64_t>(
                std::ceil(static_cast<double>(plan.iterations) * 6.0 / measured));
        }
        json summary = compute_overhead_summary(report, plan, 10.0);

        expect(summary.at("cells").size() == plan.process_counts.size(),
               "missing proc-count cells");
        expect(summary.at("outputs_match").get<bool>(),
               "encrypted and plain outputs differ");
        expect(serial.count > 0 && serial.mean >= 5.0,
               "workload too small: " + std::to_string(serial.mean) + "s serial");

        std::string offenders;
        for (const auto& cell : summary.at("cells")) {
            if (cell.at("flagged").get<bool>())
                offenders += " procs=" + std::to_string(cell.at("procs").get<int>()) +
                             "=" + std::to_string(cell.at("overhead_pct").get<double>()) +
                             "%";
        }
        expect(offenders.empty(), "overhead above 10%:" + offenders);

        scwtest::TempDir out;
        emit_report(report, out.str(), "compute", summary);
        expect(std::filesystem::exists(out.sub("compute_report.csv")),
               "report emission failed");
    });
}

// ---------------------------------------------------------------------------
// Criterion 9: compute_bench partition invariance
// ---------------------------------------------------------------------------

TEST_CASE("C9 partition invariance") {
    criterion("C9", "world sizes {1,2,4} produce identical digests at dim 64, seed 42", [] {
        TaskSpec spec;
        spec.kind = TaskKind::compute_bench;
        spec.parameters = {{"matrix_dim", 64}, {"iterations", 10}, {"seed", 42}};

        ComputeBenchResult oracle = compute_bench_run(spec, 1);  // single-process
        for (std::uint32_t world : {2u, 4u}) {
            ComputeBenchResult r = compute_bench_run(spec, world);
            expect(r.factor_digest == oracle.factor_digest,
                   "digest differs at world size " + std::to_string(world));
        }

        // The same holds through the full system on one node.
        scwtest::TestCluster cluster;
        cluster.add_worker("node-a", false);
        auto client = cluster.client();
        auto [key_id, pub] = cluster.issue_user_key();
        KeyPair result_keys = generate_keypair();
        PackageOptions opts;
        opts.task_spec = spec;
        Bytes bundle = package_tree(MemoryTree{}, pub, key_id, opts);
        std::string job_id = client.submit(bundle, {}, 1, 2,
                                           result_keys.public_part.to_pem());
        json view = client.poll_until_terminal(job_id, 60.0);
        expect(view.at("state") == "COMPLETED", "system run failed");
        auto fetched = client.fetch(job_id);
        VerifiedWorkflow wf =
            unseal_bundle(fetched.sealed_results.at(0), result_keys.private_part);
        expect(to_string(wf.tree.files.at("bench/compute_digest.txt").data) ==
                   oracle.factor_digest.hex() + "\n",
               "system digest differs from the single-process oracle");
    });
}
