// Copyright 2026 The scw Authors
// SPDX-License-Identifier: Apache-2.0
//
// Typed task kernels executed by worker nodes. Tasks are not arbitrary
// commands: each kind has a parameter schema and a deterministic contract,
// which keeps the decrypt-run-encrypt lifecycle testable end to end.

#pragma once

#include <barrier>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "scw/archive.hpp"
#include "scw/dataimage.hpp"
#include "scw/errors.hpp"

namespace scw {

using nlohmann::json;

enum class TaskKind { echo, transform, compute_bench, io_bench };

inline const char* task_kind_name(TaskKind k) {
    switch (k) {
    case TaskKind::echo: return "echo";
    case TaskKind::transform: return "transform";
    case TaskKind::compute_bench: return "compute_bench";
    case TaskKind::io_bench: return "io_bench";
    }
    return "?";
}

inline TaskKind task_kind_from_name(const std::string& name) {
    if (name == "echo") return TaskKind::echo;
    if (name == "transform") return TaskKind::transform;
    if (name == "compute_bench") return TaskKind::compute_bench;
    if (name == "io_bench") return TaskKind::io_bench;
    throw ValidationError("unknown task kind: " + name);
}

struct TaskSpec {
    TaskKind kind = TaskKind::echo;
    json parameters = json::object();

    json to_json() const {
        return json{{"kind", task_kind_name(kind)}, {"parameters", parameters}};
    }

    static TaskSpec from_json(const json& j) {
        TaskSpec spec;
        spec.kind = task_kind_from_name(j.at("kind").get<std::string>());
        spec.parameters = j.value("parameters", json::object());
        if (!spec.parameters.is_object())
            throw ValidationError("task parameters must be an object");
        spec.validate();
        return spec;
    }

    // Parameter schema check; throws ValidationError on violations.
    void validate() const {
        auto require_uint = [&](const char* name, std::uint64_t min_value = 0) {
            if (!parameters.contains(name) ||
                !parameters.at(name).is_number_integer() ||
                (parameters.at(name).is_number_integer() &&
                 !parameters.at(name).is_number_unsigned() &&
                 parameters.at(name).get<std::int64_t>() < 0))
                throw ValidationError(std::string("task parameter '") + name +
                                      "' must be a non-negative integer");
            if (parameters.at(name).get<std::uint64_t>() < min_value)
                throw ValidationError(std::string("task parameter '") + name +
                                      "' below minimum");
        };
        switch (kind) {
        case TaskKind::echo:
            break;
        case TaskKind::transform:
            if (parameters.contains("delta") &&
                !parameters.at("delta").is_number_integer())
                throw ValidationError("transform delta must be an integer");
            break;
        case TaskKind::compute_bench:
            require_uint("matrix_dim", 1);
            require_uint("iterations");
            require_uint("seed");
            if (parameters.contains("factor_rank")) require_uint("factor_rank", 1);
            break;
        case TaskKind::io_bench: {
            require_uint("block_size", 1);
            require_uint("total_bytes");
            std::string target = parameters.value("target", "scratch");
            if (target != "scratch" && target != "sector_plain" &&
                target != "sector_xts" && target != "image")
                throw ValidationError(
                    "io_bench target must be scratch|sector_plain|sector_xts|image");
            if (target != "scratch") {
                if (parameters.at("block_size").get<std::uint64_t>() % kSectorSize != 0 ||
                    parameters.at("total_bytes").get<std::uint64_t>() % kSectorSize != 0)
                    throw ValidationError("sector targets need sector-aligned sizes");
            }
            break;
        }
        }
    }
};

struct IoBlockSample {
    std::uint32_t rank = 0;
    std::uint64_t bytes = 0;
    double seconds = 0.0;
};

inline void to_json(json& j, const IoBlockSample& s) {
    j = json{{"rank", s.rank}, {"bytes", s.bytes}, {"seconds", s.seconds}};
}
inline void from_json(const json& j, IoBlockSample& s) {
    j.at("rank").get_to(s.rank);
    j.at("bytes").get_to(s.bytes);
    j.at("seconds").get_to(s.seconds);
}

// Per-node execution report returned to the scheduler alongside the sealed
// result blob. Carries the measured quantities behind the benchmarks.
struct ExecutionReport {
    std::string job_id;
    std::string node_id;
    std::vector<double> rank_seconds;  // one entry per local rank
    std::uint64_t bytes_read = 0;
    std::uint64_t bytes_written = 0;
    std::string outcome;  // "ok" or error class
    std::string result_digest;
    double unseal_seconds = 0.0;
    double exec_seconds = 0.0;
    double seal_seconds = 0.0;
    std::vector<IoBlockSample> io_samples;

    json to_json() const {
        return json{{"job_id", job_id},
                    {"node_id", node_id},
                    {"rank_seconds", rank_seconds},
                    {"bytes_read", bytes_read},
                    {"bytes_written", bytes_written},
                    {"outcome", outcome},
                    {"result_digest", result_digest},
                    {"unseal_seconds", unseal_seconds},
                    {"exec_seconds", exec_seconds},
                    {"seal_seconds", seal_seconds},
                    {"io_samples", io_samples}};
    }

    static ExecutionReport from_json(const json& j) {
        ExecutionReport r;
        j.at("job_id").get_to(r.job_id);
        j.at("node_id").get_to(r.node_id);
        j.at("rank_seconds").get_to(r.rank_seconds);
        j.at("bytes_read").get_to(r.bytes_read);
        j.at("bytes_written").get_to(r.bytes_written);
        j.at("outcome").get_to(r.outcome);
        j.at("result_digest").get_to(r.result_digest);
        r.unseal_seconds = j.value("unseal_seconds", 0.0);
        r.exec_seconds = j.value("exec_seconds", 0.0);
        r.seal_seconds = j.value("seal_seconds", 0.0);
        if (j.contains("io_samples")) j.at("io_samples").get_to(r.io_samples);
        return r;
    }
};

struct TaskOutcome {
    MemoryTree outputs;
    std::vector<double> rank_seconds;
    std::uint64_t bytes_read = 0;
    std::uint64_t bytes_written = 0;
    std::vector<IoBlockSample> io_samples;
};

// Node-local resources an assignment may use: volatile-backed scratch space
// and any data images shipped with the job (already encrypted; keys leased).
struct TaskResources {
    std::string scratch_dir;
    std::vector<std::shared_ptr<ImageHandle>> images;
};

namespace taskrng {

// splitmix64 finalizer; platform-stable generator for synthetic workloads.
inline std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t hash3(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return mix(mix(mix(seed) ^ a) ^ b);
}

inline double unit_double(std::uint64_t v) {
    return static_cast<double>(v >> 11) * (1.0 / 9007199254740992.0);
}

inline void fill_block(Bytes& block, std::uint64_t seed) {
    std::uint64_t s = seed;
    std::size_t i = 0;
    while (i + 8 <= block.size()) {
        std::uint64_t v = mix(s++);
        std::memcpy(block.data() + i, &v, 8);
        i += 8;
    }
    for (std::uint64_t v = mix(s); i < block.size(); ++i, v >>= 8)
        block[i] = static_cast<std::uint8_t>(v);
}

}  // namespace taskrng

namespace task_detail {

inline double now_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// Solves (k x k SPD) * x = b in place via Cholesky.
inline void cholesky_solve(std::vector<double>& a, std::vector<double>& b,
                           std::size_t k) {
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = a[i * k + j];
            for (std::size_t p = 0; p < j; ++p) sum -= a[i * k + p] * a[j * k + p];
            if (i == j) {
                a[i * k + i] = std::sqrt(sum);
            } else {
                a[i * k + j] = sum / a[j * k + j];
            }
        }
    }
    for (std::size_t i = 0; i < k; ++i) {
        double sum = b[i];
        for (std::size_t p = 0; p < i; ++p) sum -= a[i * k + p] * b[p];
        b[i] = sum / a[i * k + i];
    }
    for (std::size_t ii = k; ii-- > 0;) {
        double sum = b[ii];
        for (std::size_t p = ii + 1; p < k; ++p) sum -= a[p * k + ii] * b[p];
        b[ii] = sum / a[ii * k + ii];
    }
}

}  // namespace task_detail

// ---------------------------------------------------------------------------
// echo / transform
// ---------------------------------------------------------------------------

// Input files are indexed in sorted order and partitioned across global
// ranks; each node emits only the files owned by its local ranks, so the
// union over nodes reproduces one full run.
inline TaskOutcome run_echo_or_transform(const TaskSpec& spec,
                                         const MemoryTree& input,
                                         std::uint32_t world_size,
                                         std::uint32_t rank_begin,
                                         std::uint32_t rank_count) {
    int delta = spec.kind == TaskKind::transform
                    ? spec.parameters.value("delta", 1)
                    : 0;
    std::string prefix = spec.kind == TaskKind::echo ? "echo/" : "out/";

    std::vector<std::pair<std::string, const MemoryFile*>> files;
    files.reserve(input.files.size());
    for (const auto& [path, file] : input.files) files.emplace_back(path, &file);

    TaskOutcome outcome;
    outcome.rank_seconds.assign(rank_count, 0.0);
    std::vector<MemoryTree> per_rank(rank_count);
    std::vector<std::thread> threads;
    for (std::uint32_t t = 0; t < rank_count; ++t) {
        threads.emplace_back([&, t] {
            double t0 = task_detail::now_seconds();
            std::uint32_t rank = rank_begin + t;
            for (std::size_t i = 0; i < files.size(); ++i) {
                if (i % world_size != rank) continue;
                MemoryFile out;
                out.executable = files[i].second->executable;
                out.data = files[i].second->data;
                if (delta != 0) {
                    for (auto& b : out.data)
                        b = static_cast<std::uint8_t>(b + delta);
                }
                per_rank[t].files.emplace(prefix + files[i].first, std::move(out));
            }
            outcome.rank_seconds[t] = task_detail::now_seconds() - t0;
        });
    }
    for (auto& th : threads) th.join();
    for (auto& tree : per_rank) outcome.outputs.merge(tree);
    return outcome;
}

// ---------------------------------------------------------------------------
// compute_bench: deterministic alternating-least-squares factorization
// ---------------------------------------------------------------------------
//
// A synthetic n x n ratings matrix derived from the seed is factorized into
// U V^T over a fixed number of iterations. Row updates depend only on the
// previous half-iteration state and each thread recomputes the shared Gram
// matrix in a fixed order, so the result is bit-identical for any thread or
// rank partition — the single-process run is the oracle for any world size.

struct ComputeBenchResult {
    Digest factor_digest;
    std::vector<double> thread_seconds;
};

inline ComputeBenchResult compute_bench_run(const TaskSpec& spec,
                                            std::uint32_t thread_count) {
    const std::size_t n = spec.parameters.at("matrix_dim").get<std::size_t>();
    const std::uint64_t iterations = spec.parameters.at("iterations").get<std::uint64_t>();
    const std::uint64_t seed = spec.parameters.at("seed").get<std::uint64_t>();
    const std::size_t k = spec.parameters.value("factor_rank", std::size_t{8});
    const double reg = spec.parameters.value("lambda", 0.1);
    if (thread_count == 0) throw ValidationError("thread count must be >= 1");

    std::vector<double> ratings(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            ratings[i * n + j] =
                taskrng::unit_double(taskrng::hash3(seed, i, j));

    std::vector<double> u(n * k), v(n * k);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < k; ++c) {
            u[i * k + c] = taskrng::unit_double(taskrng::hash3(seed ^ 0xA11Cull, i, c)) - 0.5;
            v[i * k + c] = taskrng::unit_double(taskrng::hash3(seed ^ 0xBEEFull, i, c)) - 0.5;
        }

    std::vector<double> u_next(n * k), v_next(n * k);
    ComputeBenchResult result;
    result.thread_seconds.assign(thread_count, 0.0);

    std::barrier sync(static_cast<std::ptrdiff_t>(thread_count));

    auto worker = [&](std::uint32_t t) {
        std::size_t rows_per = (n + thread_count - 1) / thread_count;
        std::size_t row_begin = std::min(n, t * rows_per);
        std::size_t row_end = std::min(n, row_begin + rows_per);
        double busy = 0.0;

        std::vector<double> gram(k * k), rhs(k), chol(k * k);
        auto half_step = [&](const std::vector<double>& fixed,
                             std::vector<double>& next, bool transpose) {
            double t0 = task_detail::now_seconds();
            // Gram = fixed^T fixed + reg*I, identical on every thread.
            std::fill(gram.begin(), gram.end(), 0.0);
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t a = 0; a < k; ++a)
                    for (std::size_t b = 0; b <= a; ++b)
                        gram[a * k + b] += fixed[j * k + a] * fixed[j * k + b];
            for (std::size_t a = 0; a < k; ++a) {
                for (std::size_t b = a + 1; b < k; ++b)
                    gram[a * k + b] = gram[b * k + a];
                gram[a * k + a] += reg;
            }
            for (std::size_t i = row_begin; i < row_end; ++i) {
                std::fill(rhs.begin(), rhs.end(), 0.0);
                for (std::size_t j = 0; j < n; ++j) {
                    double r = transpose ? ratings[j * n + i] : ratings[i * n + j];
                    for (std::size_t a = 0; a < k; ++a)
                        rhs[a] += fixed[j * k + a] * r;
                }
                chol = gram;
                task_detail::cholesky_solve(chol, rhs, k);
                for (std::size_t a = 0; a < k; ++a) next[i * k + a] = rhs[a];
            }
            busy += task_detail::now_seconds() - t0;
        };

        for (std::uint64_t it = 0; it < iterations; ++it) {
            half_step(v, u_next, /*transpose=*/false);
            sync.arrive_and_wait();
            if (t == 0) u.swap(u_next);
            sync.arrive_and_wait();
            half_step(u, v_next, /*transpose=*/true);
            sync.arrive_and_wait();
            if (t == 0) v.swap(v_next);
            sync.arrive_and_wait();
        }
        result.thread_seconds[t] = busy;
    };

    if (thread_count == 1) {
        worker(0);
    } else {
        std::vector<std::thread> threads;
        for (std::uint32_t t = 0; t < thread_count; ++t)
            threads.emplace_back(worker, t);
        for (auto& th : threads) th.join();
    }

    Sha256 h;
    auto feed = [&](const std::vector<double>& m) {
        for (double x : m) {
            std::uint64_t bits;
            std::memcpy(&bits, &x, 8);
            std::uint8_t le[8];
            for (int i = 0; i < 8; ++i) le[i] = static_cast<std::uint8_t>(bits >> (8 * i));
            h.update({le, 8});
        }
    };
    feed(u);
    feed(v);
    result.factor_digest = h.finish();
    return result;
}

inline TaskOutcome run_compute_bench(const TaskSpec& spec, std::uint32_t rank_count) {
    ComputeBenchResult r = compute_bench_run(spec, rank_count);
    TaskOutcome outcome;
    outcome.rank_seconds = r.thread_seconds;
    std::string text = r.factor_digest.hex() + "\n";
    outcome.outputs.files["bench/compute_digest.txt"] =
        MemoryFile{Bytes(text.begin(), text.end()), false};
    return outcome;
}

// ---------------------------------------------------------------------------
// io_bench: block-write bandwidth kernel
// ---------------------------------------------------------------------------

inline TaskOutcome run_io_bench(const TaskSpec& spec, const TaskResources& res,
                                std::uint32_t rank_begin, std::uint32_t rank_count) {
    const std::uint64_t block_size = spec.parameters.at("block_size").get<std::uint64_t>();
    const std::uint64_t total_bytes = spec.parameters.at("total_bytes").get<std::uint64_t>();
    const std::string target = spec.parameters.value("target", "scratch");
    const bool sync_each = spec.parameters.value("sync", true);
    const std::uint64_t seed = spec.parameters.value("seed", std::uint64_t{1});
    const std::size_t key_bits = spec.parameters.value("xts_key_bits", std::size_t{128});
    const std::string scratch_dir = res.scratch_dir;

    std::shared_ptr<ImageHandle> image;
    std::mutex image_mutex;  // an image handle takes one writer at a time
    if (target == "image") {
        if (res.images.empty())
            throw ValidationError("io_bench image target requires a shipped image");
        image = res.images.front();
        std::uint64_t sectors_per_rank = total_bytes / kSectorSize;
        if (sectors_per_rank * rank_count > image->sector_count())
            throw RangeError("image too small for requested io_bench workload");
    } else {
        io::ensure_dir(scratch_dir);
    }

    TaskOutcome outcome;
    outcome.rank_seconds.assign(rank_count, 0.0);
    std::vector<std::vector<IoBlockSample>> samples(rank_count);
    std::vector<std::uint64_t> written(rank_count, 0);
    std::vector<std::thread> threads;

    for (std::uint32_t t = 0; t < rank_count; ++t) {
        threads.emplace_back([&, t] {
            std::uint32_t rank = rank_begin + t;
            std::string path = scratch_dir + "/io_rank_" + std::to_string(rank);
            Bytes block(static_cast<std::size_t>(block_size));
            taskrng::fill_block(block, seed + rank);

            double busy = 0.0;
            std::uint64_t done = 0;

            if (target == "image") {
                // Ranks write disjoint sector regions through the shared
                // handle; writes serialize on the handle's single-writer rule.
                std::uint64_t region_base = t * (total_bytes / kSectorSize);
                std::uint64_t sector = region_base;
                while (done < total_bytes) {
                    std::uint64_t len = std::min(block_size, total_bytes - done);
                    std::memcpy(block.data(), &done, sizeof(done));
                    double t0 = task_detail::now_seconds();
                    {
                        std::lock_guard lock(image_mutex);
                        image->write_sectors(
                            sector, ByteView(block).first(static_cast<std::size_t>(len)));
                    }
                    double dt = task_detail::now_seconds() - t0;
                    busy += dt;
                    samples[t].push_back({rank, len, dt});
                    done += len;
                    sector += len / kSectorSize;
                }
            } else if (target == "scratch") {
                io::FileHandle file = io::FileHandle::open_write(path);
                while (done < total_bytes) {
                    std::uint64_t len = std::min(block_size, total_bytes - done);
                    std::memcpy(block.data(), &done, sizeof(done));
                    double t0 = task_detail::now_seconds();
                    file.write(ByteView(block).first(static_cast<std::size_t>(len)));
                    if (sync_each) file.sync_data();
                    double dt = task_detail::now_seconds() - t0;
                    busy += dt;
                    samples[t].push_back({rank, len, dt});
                    done += len;
                }
                if (!sync_each && total_bytes > 0) {
                    double t0 = task_detail::now_seconds();
                    file.sync_data();
                    busy += task_detail::now_seconds() - t0;
                }
            } else {
                std::uint64_t sectors = total_bytes / kSectorSize;
                std::optional<XtsCipher> cipher;
                if (target == "sector_xts") {
                    Dek key = Dek::generate(DekPurpose::image,
                                            key_bits == 256 ? 64 : 32);
                    cipher.emplace(key);
                }
                {
                    io::FileHandle init = io::FileHandle::open_write(path);
                    (void)init;  // create/truncate before positioned writes
                }
                SectorFile store(io::FileHandle::open_rw(path), 0,
                                 std::max<std::uint64_t>(sectors, 1),
                                 std::move(cipher));
                std::uint64_t sector = 0;
                while (done < total_bytes) {
                    std::uint64_t len = std::min(block_size, total_bytes - done);
                    std::memcpy(block.data(), &done, sizeof(done));
                    double t0 = task_detail::now_seconds();
                    store.write(sector, ByteView(block).first(static_cast<std::size_t>(len)),
                                sync_each);
                    double dt = task_detail::now_seconds() - t0;
                    busy += dt;
                    samples[t].push_back({rank, len, dt});
                    done += len;
                    sector += len / kSectorSize;
                }
                if (!sync_each && total_bytes > 0) {
                    double t0 = task_detail::now_seconds();
                    store.sync();
                    busy += task_detail::now_seconds() - t0;
                }
            }
            ::unlink(path.c_str());
            outcome.rank_seconds[t] = busy;
            written[t] = done;
        });
    }
    for (auto& th : threads) th.join();

    for (std::uint32_t t = 0; t < rank_count; ++t) {
        outcome.bytes_written += written[t];
        for (auto& s : samples[t]) outcome.io_samples.push_back(s);
        json acct = {{"rank", rank_begin + t},
                     {"bytes_written", written[t]},
                     {"blocks", samples[t].size()}};
        std::string text = acct.dump();
        outcome.outputs.files["bench/io_rank_" + std::to_string(rank_begin + t) +
                              ".json"] = MemoryFile{Bytes(text.begin(), text.end()), false};
    }
    return outcome;
}

// Entry point used by the worker for one assignment.
inline TaskOutcome run_task(const TaskSpec& spec, const MemoryTree& input,
                            std::uint32_t world_size, std::uint32_t rank_begin,
                            std::uint32_t rank_count, const TaskResources& res) {
    spec.validate();
    if (rank_count == 0) throw ValidationError("assignment has no ranks");
    switch (spec.kind) {
    case TaskKind::echo:
    case TaskKind::transform:
        return run_echo_or_transform(spec, input, world_size, rank_begin, rank_count);
    case TaskKind::compute_bench:
        return run_compute_bench(spec, rank_count);
    case TaskKind::io_bench:
        return run_io_bench(spec, res, rank_begin, rank_count);
    }
    throw ValidationError("unhandled task kind");
}

}  // namespace scw
