// Copyright 2026 The scw Authors
// SPDX-License-Identifier: Apache-2.0
//
// Benchmark harness: drives the I/O bandwidth grid (block sizes x process
// counts x storage targets, encrypted vs plain) and the compute execution
// time comparison (encrypted vs unencrypted bundle path) through the real
// submission pipeline, then emits machine-readable reports.

#pragma once

#include <sys/utsname.h>

#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "scw/bundle.hpp"
#include "scw/scheduler.hpp"
#include "scw/serde.hpp"
#include "scw/tasks.hpp"

namespace scw {

struct BenchMatrix {
    std::vector<std::uint64_t> block_sizes = {64 * 1024, 256 * 1024, 1024 * 1024,
                                              4 * 1024 * 1024, 16 * 1024 * 1024};
    std::vector<std::uint32_t> process_counts = {1, 10};
    std::vector<std::string> targets = {"plain_local", "secure_encrypted",
                                        "secure_unencrypted"};
    std::uint32_t repetitions = 5;
    std::uint64_t total_bytes_per_rank = 0;  // 0: max(block_size, 2 MiB)
    bool sync_each_block = true;

    std::uint64_t cell_total_bytes(std::uint64_t block_size) const {
        if (total_bytes_per_rank != 0) return total_bytes_per_rank;
        return std::max<std::uint64_t>(block_size, 2 * 1024 * 1024);
    }

    json to_json() const {
        return json{{"block_sizes", block_sizes},
                    {"process_counts", process_counts},
                    {"targets", targets},
                    {"repetitions", repetitions},
                    {"total_bytes_per_rank", total_bytes_per_rank},
                    {"sync_each_block", sync_each_block}};
    }

    static BenchMatrix from_json(const json& j) {
        BenchMatrix m;
        if (j.contains("block_sizes")) j.at("block_sizes").get_to(m.block_sizes);
        if (j.contains("process_counts")) j.at("process_counts").get_to(m.process_counts);
        if (j.contains("targets")) j.at("targets").get_to(m.targets);
        if (j.contains("repetitions")) j.at("repetitions").get_to(m.repetitions);
        if (j.contains("total_bytes_per_rank"))
            j.at("total_bytes_per_rank").get_to(m.total_bytes_per_rank);
        if (j.contains("sync_each_block"))
            j.at("sync_each_block").get_to(m.sync_each_block);
        if (m.repetitions < 1) throw ValidationError("repetitions must be >= 1");
        return m;
    }
};

// Maps a benchmark target to the worker-side io_bench target kind.
inline std::string io_target_for(const std::string& bench_target) {
    if (bench_target == "plain_local") return "scratch";
    if (bench_target == "secure_encrypted") return "sector_xts";
    if (bench_target == "secure_unencrypted") return "sector_plain";
    throw ValidationError("unknown bench target: " + bench_target);
}

struct BenchRow {
    std::string experiment;  // "io" or "compute"
    std::string target;
    std::uint64_t block_size = 0;
    std::uint32_t procs = 0;
    bool encrypted = false;
    std::uint32_t rep = 0;
    std::string metric_name;
    double metric_value = 0.0;
    std::string timestamp;
};

struct BenchReport {
    std::vector<BenchRow> rows;
    json environment;

    static constexpr const char* kCsvHeader =
        "experiment,target,block_size,procs,encrypted,rep,metric_name,"
        "metric_value,timestamp";

    std::string to_csv() const {
        std::ostringstream out;
        out << kCsvHeader << "\n";
        for (const BenchRow& r : rows) {
            out << r.experiment << ',' << r.target << ',' << r.block_size << ','
                << r.procs << ',' << (r.encrypted ? "true" : "false") << ','
                << r.rep << ',' << r.metric_name << ',';
            out.precision(9);
            out << r.metric_value << ',' << r.timestamp << "\n";
        }
        return out.str();
    }

    static BenchReport from_csv(const std::string& csv) {
        BenchReport report;
        std::istringstream in(csv);
        std::string line;
        if (!std::getline(in, line) || line != kCsvHeader)
            throw FormatError("unexpected bench CSV header");
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::vector<std::string> fields;
            std::size_t pos = 0;
            while (true) {
                std::size_t comma = line.find(',', pos);
                fields.push_back(line.substr(pos, comma == std::string::npos
                                                      ? std::string::npos
                                                      : comma - pos));
                if (comma == std::string::npos) break;
                pos = comma + 1;
            }
            if (fields.size() != 9) throw FormatError("malformed bench CSV row");
            BenchRow r;
            r.experiment = fields[0];
            r.target = fields[1];
            r.block_size = std::stoull(fields[2]);
            r.procs = static_cast<std::uint32_t>(std::stoul(fields[3]));
            r.encrypted = fields[4] == "true";
            r.rep = static_cast<std::uint32_t>(std::stoul(fields[5]));
            r.metric_name = fields[6];
            r.metric_value = std::stod(fields[7]);
            r.timestamp = fields[8];
            report.rows.push_back(std::move(r));
        }
        return report;
    }

    // Whitespace-separated columns grouped per experiment cell; consumable by
    // gnuplot or any plotting frontend.
    std::string to_plot_data() const {
        std::ostringstream out;
        out << "# experiment target block_size procs encrypted mean_metric\n";
        struct Key {
            std::string exp, target, metric;
            std::uint64_t bs;
            std::uint32_t procs;
            bool operator<(const Key& o) const {
                return std::tie(exp, target, metric, bs, procs) <
                       std::tie(o.exp, o.target, o.metric, o.bs, o.procs);
            }
        };
        std::map<Key, std::pair<double, int>> acc;
        for (const BenchRow& r : rows) {
            auto& slot = acc[{r.experiment, r.target, r.metric_name, r.block_size,
                              r.procs}];
            slot.first += r.metric_value;
            slot.second += 1;
        }
        for (const auto& [key, sums] : acc) {
            out << key.exp << ' ' << key.target << ' ' << key.bs << ' '
                << key.procs << ' ' << key.metric << ' '
                << (sums.first / sums.second) << "\n";
        }
        return out.str();
    }

    struct CellStats {
        double mean = 0.0;
        double min = 0.0;
        double max = 0.0;
        int count = 0;
    };

    CellStats stats(const std::string& experiment, const std::string& target,
                    std::uint64_t block_size, std::uint32_t procs,
                    const std::string& metric) const {
        CellStats s;
        for (const BenchRow& r : rows) {
            if (r.experiment != experiment || r.target != target ||
                r.block_size != block_size || r.procs != procs ||
                r.metric_name != metric)
                continue;
            if (s.count == 0) {
                s.min = r.metric_value;
                s.max = r.metric_value;
            }
            s.min = std::min(s.min, r.metric_value);
            s.max = std::max(s.max, r.metric_value);
            s.mean += r.metric_value;
            s.count += 1;
        }
        if (s.count > 0) s.mean /= s.count;
        return s;
    }
};

inline json bench_environment_stamp() {
    struct utsname uts{};
    ::uname(&uts);
    return json{{"system", uts.sysname},
                {"release", uts.release},
                {"machine", uts.machine},
                {"hardware_threads", std::thread::hardware_concurrency()},
                {"timestamp", rfc3339_now()}};
}

struct BenchContext {
    SchedulerClient* client = nullptr;
    std::string key_id;            // vault wrapping key for bench bundles
    PublicKey bundle_pub;          // its public part
    std::string result_pub_pem;    // client-held result key
    PrivateKey result_priv;
    double job_timeout = 300.0;
};

// ---------------------------------------------------------------------------
// I/O bandwidth matrix
// ---------------------------------------------------------------------------

inline BenchReport run_io_matrix(BenchContext& ctx, const BenchMatrix& matrix) {
    BenchReport report;
    report.environment = bench_environment_stamp();

    for (std::uint64_t block_size : matrix.block_sizes) {
        for (std::uint32_t procs : matrix.process_counts) {
            // Targets interleave within each repetition so paired cells see
            // the same disk conditions.
            for (std::uint32_t rep = 0; rep < matrix.repetitions; ++rep) {
                for (const std::string& target : matrix.targets) {
                    bool encrypted = target == "secure_encrypted";
                    std::uint64_t total = matrix.cell_total_bytes(block_size);
                    BenchRow row;
                    row.experiment = "io";
                    row.target = target;
                    row.block_size = block_size;
                    row.procs = procs;
                    row.encrypted = encrypted;
                    row.rep = rep;
                    row.timestamp = rfc3339_now();
                    try {
                        PackageOptions opts;
                        opts.task_spec.kind = TaskKind::io_bench;
                        opts.task_spec.parameters = {
                            {"block_size", block_size},
                            {"total_bytes", total},
                            {"target", io_target_for(target)},
                            {"sync", matrix.sync_each_block},
                            {"seed", 7}};
                        Bytes bundle = package_tree(MemoryTree{}, ctx.bundle_pub,
                                                    ctx.key_id, opts);
                        std::string job_id = ctx.client->submit(
                            bundle, {}, 1, procs, ctx.result_pub_pem);
                        json view = ctx.client->poll_until_terminal(job_id,
                                                                    ctx.job_timeout);
                        if (view.at("state") != "COMPLETED")
                            throw IoError(view.value("failure_reason", "job failed"));

                        double wall = 0.0;
                        std::uint64_t bytes_written = 0;
                        for (auto& [node, rj] : view.at("reports").items()) {
                            ExecutionReport er = ExecutionReport::from_json(rj);
                            for (double s : er.rank_seconds) wall = std::max(wall, s);
                            bytes_written += er.bytes_written;
                        }
                        double mib = static_cast<double>(bytes_written) / (1024.0 * 1024.0);
                        row.metric_name = "bandwidth_mibps";
                        row.metric_value = (bytes_written == 0 || wall <= 0.0)
                                               ? 0.0
                                               : mib / wall;
                        report.rows.push_back(row);

                        BenchRow bytes_row = row;
                        bytes_row.metric_name = "bytes_written";
                        bytes_row.metric_value = static_cast<double>(bytes_written);
                        report.rows.push_back(bytes_row);
                    } catch (const Error& e) {
                        // A failed cell is recorded and the harness continues.
                        row.metric_name = "failed";
                        row.metric_value = 0.0;
                        report.rows.push_back(row);
                        (void)e;
                    }
                }
            }
        }
    }
    return report;
}

// Qualitative gate: encrypted vs unencrypted secure-tier bandwidth per cell.
// Returns per-cell relative difference and flags any cell above threshold.
inline json io_overhead_summary(const BenchReport& report, const BenchMatrix& matrix,
                                double threshold_pct = 15.0) {
    json cells = json::array();
    bool any_flagged = false;
    for (std::uint64_t block_size : matrix.block_sizes) {
        for (std::uint32_t procs : matrix.process_counts) {
            auto enc = report.stats("io", "secure_encrypted", block_size, procs,
                                    "bandwidth_mibps");
            auto plain = report.stats("io", "secure_unencrypted", block_size, procs,
                                      "bandwidth_mibps");
            if (enc.count == 0 || plain.count == 0 || plain.mean <= 0.0) continue;
            double diff_pct =
                std::abs(plain.mean - enc.mean) / plain.mean * 100.0;
            bool flagged = diff_pct >= threshold_pct;
            any_flagged = any_flagged || flagged;
            cells.push_back(json{{"block_size", block_size},
                                 {"procs", procs},
                                 {"encrypted_mean_mibps", enc.mean},
                                 {"unencrypted_mean_mibps", plain.mean},
                                 {"diff_pct", diff_pct},
                                 {"flagged", flagged}});
        }
    }
    return json{{"threshold_pct", threshold_pct},
                {"cells", cells},
                {"any_flagged", any_flagged}};
}

// ---------------------------------------------------------------------------
// Compute execution time comparison
// ---------------------------------------------------------------------------

struct ComputeBenchPlan {
    std::vector<std::uint32_t> process_counts = {1, 2, 4, 8, 10};
    std::size_t matrix_dim = 192;
    std::uint64_t iterations = 60;
    std::uint64_t seed = 42;
    std::size_t factor_rank = 12;
    std::uint32_t repetitions = 1;
};

// Chooses an iteration count so the serial workload runs at least
// `target_seconds` on this host.
inline std::uint64_t calibrate_compute_iterations(std::size_t dim, std::size_t rank,
                                                  std::uint64_t seed,
                                                  double target_seconds) {
    TaskSpec probe;
    probe.kind = TaskKind::compute_bench;
    probe.parameters = {{"matrix_dim", dim},
                        {"iterations", 3},
                        {"seed", seed},
                        {"factor_rank", rank}};
    double t0 = task_detail::now_seconds();
    compute_bench_run(probe, 1);
    double per_iter = (task_detail::now_seconds() - t0) / 3.0;
    if (per_iter <= 0.0) per_iter = 1e-3;
    auto iters = static_cast<std::uint64_t>(std::ceil(target_seconds / per_iter));
    return std::max<std::uint64_t>(iters, 5);
}

inline BenchReport run_compute_matrix(BenchContext& ctx, const ComputeBenchPlan& plan) {
    BenchReport report;
    report.environment = bench_environment_stamp();

    for (std::uint32_t procs : plan.process_counts) {
        for (bool encrypted : {true, false}) {
            for (std::uint32_t rep = 0; rep < plan.repetitions; ++rep) {
                BenchRow row;
                row.experiment = "compute";
                row.target = encrypted ? "encrypted_bundle" : "plain_bundle";
                row.block_size = 0;
                row.procs = procs;
                row.encrypted = encrypted;
                row.rep = rep;
                row.timestamp = rfc3339_now();

                PackageOptions opts;
                opts.task_spec.kind = TaskKind::compute_bench;
                opts.task_spec.parameters = {{"matrix_dim", plan.matrix_dim},
                                             {"iterations", plan.iterations},
                                             {"seed", plan.seed},
                                             {"factor_rank", plan.factor_rank}};
                opts.plaintext_payload = !encrypted;
                Bytes bundle =
                    encrypted
                        ? package_tree(MemoryTree{}, ctx.bundle_pub, ctx.key_id, opts)
                        : package_tree(MemoryTree{}, PublicKey(), "", opts);

                std::string job_id =
                    ctx.client->submit(bundle, {}, 1, procs, ctx.result_pub_pem);
                json view = ctx.client->poll_until_terminal(job_id, ctx.job_timeout);
                if (view.at("state") != "COMPLETED")
                    throw IoError("compute bench job failed: " +
                                  view.value("failure_reason", "?"));

                auto reports = view.at("reports");
                ExecutionReport er =
                    ExecutionReport::from_json(reports.begin().value());
                // Container-runtime analog: decrypt + execute + re-encrypt.
                double wall = er.unseal_seconds + er.exec_seconds + er.seal_seconds;

                row.metric_name = "wall_seconds";
                row.metric_value = wall;
                report.rows.push_back(row);

                BenchRow unseal_row = row;
                unseal_row.metric_name = "unseal_seconds";
                unseal_row.metric_value = er.unseal_seconds;
                report.rows.push_back(unseal_row);

                // Correctness precedes timing: the sealed outputs must match
                // the reference digest regardless of path.
                auto fetched = ctx.client->fetch(job_id);
                VerifiedWorkflow wf = unseal_bundle(fetched.sealed_results.at(0),
                                                    ctx.result_priv);
                BenchRow digest_row = row;
                digest_row.metric_name = "output_digest_prefix";
                std::string dg = to_string(
                    wf.tree.files.at("bench/compute_digest.txt").data);
                digest_row.metric_value =
                    static_cast<double>(std::stoull(dg.substr(0, 8), nullptr, 16));
                report.rows.push_back(digest_row);
            }
        }
    }
    return report;
}

inline json compute_overhead_summary(const BenchReport& report,
                                     const ComputeBenchPlan& plan,
                                     double threshold_pct = 10.0) {
    json cells = json::array();
    bool any_flagged = false;
    bool outputs_match = true;
    for (std::uint32_t procs : plan.process_counts) {
        auto enc = report.stats("compute", "encrypted_bundle", 0, procs,
                                "wall_seconds");
        auto plain = report.stats("compute", "plain_bundle", 0, procs,
                                  "wall_seconds");
        auto enc_dg = report.stats("compute", "encrypted_bundle", 0, procs,
                                   "output_digest_prefix");
        auto plain_dg = report.stats("compute", "plain_bundle", 0, procs,
                                     "output_digest_prefix");
        if (enc.count == 0 || plain.count == 0 || plain.mean <= 0.0) continue;
        double overhead_pct = (enc.mean - plain.mean) / plain.mean * 100.0;
        bool flagged = overhead_pct >= threshold_pct;
        any_flagged = any_flagged || flagged;
        bool match = enc_dg.count > 0 && plain_dg.count > 0 &&
                     enc_dg.min == enc_dg.max && plain_dg.min == plain_dg.max &&
                     enc_dg.mean == plain_dg.mean;
        outputs_match = outputs_match && match;
        cells.push_back(json{{"procs", procs},
                             {"encrypted_mean_seconds", enc.mean},
                             {"plain_mean_seconds", plain.mean},
                             {"overhead_pct", overhead_pct},
                             {"outputs_match", match},
                             {"flagged", flagged}});
    }
    return json{{"threshold_pct", threshold_pct},
                {"cells", cells},
                {"any_flagged", any_flagged},
                {"outputs_match", outputs_match}};
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

inline void emit_report(const BenchReport& report, const std::string& out_dir,
                        const std::string& prefix, const json& summary) {
    io::ensure_dir(out_dir);
    io::write_file_atomic(out_dir + "/" + prefix + "_report.csv",
                          as_bytes(report.to_csv()));
    io::write_file_atomic(out_dir + "/" + prefix + "_plot.dat",
                          as_bytes(report.to_plot_data()));
    json full{{"environment", report.environment}, {"summary", summary}};
    std::string s = full.dump(2);
    io::write_file_atomic(out_dir + "/" + prefix + "_summary.json", as_bytes(s));
}

}  // namespace scw
