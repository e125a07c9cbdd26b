// Copyright 2026 The scw Authors
// SPDX-License-Identifier: Apache-2.0
//
// scw: user-facing client. Keygen, bundle packaging, data images, job
// submission and retrieval, and the benchmark harness.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "scw/bench.hpp"
#include "scw/bundle.hpp"
#include "scw/config.hpp"
#include "scw/dataimage.hpp"
#include "scw/keysvc.hpp"
#include "scw/scheduler.hpp"
#include "scw/worker.hpp"

using namespace scw;

namespace {

struct Ctx {
    ClientConfig config;

    ClientConfig::Identity identity() const { return config.load_identity(); }

    KeyClient keysvc_client() const {
        auto [host, port] = parse_endpoint(config.keysvc);
        auto id = identity();
        return KeyClient(host, port, id.name, id.secret);
    }

    SchedulerClient scheduler_client() const {
        auto [host, port] = parse_endpoint(config.scheduler);
        auto id = identity();
        return SchedulerClient(host, port, id.name, id.secret);
    }

    std::string state_path(const std::string& file) const {
        return config.state_dir + "/" + file;
    }

    PublicKey resolve_bundle_pub(const std::string& key_id) const {
        std::string cache = state_path("vault_key.json");
        if (std::filesystem::exists(cache)) {
            json j = json::parse(to_string(io::read_file(cache)));
            if (j.value("key_id", "") == key_id)
                return PublicKey::from_pem(j.at("public_pem").get<std::string>());
        }
        auto client = keysvc_client();
        return client.get_pubkey(key_id);
    }

    std::string default_key_id() const {
        std::string cache = state_path("vault_key.json");
        if (!std::filesystem::exists(cache))
            throw UsageError("no cached key; run `scw keygen` or pass --key-id");
        json j = json::parse(to_string(io::read_file(cache)));
        return j.at("key_id").get<std::string>();
    }

    PrivateKey result_private_key() const {
        std::string path = state_path("result_key.pem");
        if (!std::filesystem::exists(path))
            throw UsageError("no result key found; run `scw keygen` first");
        return PrivateKey::from_pem(to_string(io::read_file(path)));
    }

    std::string result_public_pem() const {
        std::string path = state_path("result_key.pub.pem");
        if (!std::filesystem::exists(path))
            throw UsageError("no result key found; run `scw keygen` first");
        return to_string(io::read_file(path));
    }
};

SecurityLevel parse_level(const std::string& level) {
    return security_level_from_name(level);
}

TaskSpec parse_task(const std::string& kind, const std::string& params_json) {
    TaskSpec spec;
    spec.kind = task_kind_from_name(kind);
    if (!params_json.empty()) {
        try {
            spec.parameters = json::parse(params_json);
        } catch (const json::exception& e) {
            throw UsageError(std::string("--task-params is not valid JSON: ") +
                             e.what());
        }
    }
    spec.validate();
    return spec;
}

int run(int argc, char** argv) {
    // Precedence: flags > environment > config file.
    std::string config_path = ClientConfig::default_path();
    for (int i = 1; i < argc - 1; ++i)
        if (std::string(argv[i]) == "--config") config_path = argv[i + 1];

    Ctx ctx;
    ctx.config = ClientConfig::load(config_path);

    CLI::App app{"scw: secure workflow middleware client"};
    app.require_subcommand(1);
    app.fallthrough();  // global options may follow the subcommand name
    std::string config_flag;
    app.add_option("--config", config_flag, "config file path");
    app.add_option("--keysvc", ctx.config.keysvc, "key service endpoint host:port");
    app.add_option("--scheduler", ctx.config.scheduler, "scheduler endpoint host:port");
    app.add_option("--credential", ctx.config.credential, "credential file");
    app.add_option("--state-dir", ctx.config.state_dir, "client state directory");

    // ---- keygen ----
    auto* keygen = app.add_subcommand("keygen",
                                      "issue a vault keypair and create the local result keypair");
    keygen->callback([&ctx] {
        io::ensure_dir(ctx.config.state_dir);
        auto client = ctx.keysvc_client();
        json issued = client.issue_keypair();
        io::write_file_atomic(ctx.state_path("vault_key.json"),
                              as_bytes(issued.dump(2)));

        KeyPair result = generate_keypair();
        io::write_file_atomic(ctx.state_path("result_key.pem"),
                              as_bytes(result.private_part.to_pem()));
        io::write_file_atomic(ctx.state_path("result_key.pub.pem"),
                              as_bytes(result.public_part.to_pem()));
        std::cout << "issued vault key " << issued.at("key_id").get<std::string>()
                  << "\nresult keypair stored under " << ctx.config.state_dir
                  << std::endl;
    });

    // ---- package ----
    auto* package = app.add_subcommand("package", "seal a workflow directory into a bundle");
    std::string pkg_dir, pkg_key_id, pkg_level, pkg_out, pkg_task_kind = "echo";
    std::string pkg_task_params, pkg_entrypoint = "main";
    package->add_option("dir", pkg_dir, "workflow directory")->required();
    package->add_option("--key-id", pkg_key_id, "vault key id (default: cached key)");
    package->add_option("--level", pkg_level, "standard|sev")
        ->default_val("standard");
    package->add_option("--out", pkg_out, "output bundle file")->required();
    package->add_option("--task-kind", pkg_task_kind,
                        "echo|transform|compute_bench|io_bench");
    package->add_option("--task-params", pkg_task_params, "task parameters (JSON)");
    package->add_option("--entrypoint", pkg_entrypoint, "entrypoint name");
    package->callback([&] {
        std::string key_id = pkg_key_id.empty() ? ctx.default_key_id() : pkg_key_id;
        PackageOptions opts;
        opts.entrypoint = pkg_entrypoint;
        opts.security_level = parse_level(pkg_level);
        opts.task_spec = parse_task(pkg_task_kind, pkg_task_params);
        PublicKey pub = ctx.resolve_bundle_pub(key_id);
        package_dir_to_file(pkg_dir, pkg_out, pub, key_id, opts);
        BundleManifest m = inspect_bundle_file(pkg_out);
        std::cout << "bundle " << m.bundle_id << " -> " << pkg_out
                  << " (payload " << m.payload_size << " bytes, "
                  << security_level_name(m.security_level) << ")" << std::endl;
    });

    // ---- inspect ----
    auto* inspect = app.add_subcommand("inspect", "print a bundle manifest");
    std::string ins_file;
    bool ins_json = false;
    inspect->add_option("bundle", ins_file, "bundle file")->required();
    inspect->add_flag("--json", ins_json, "machine-readable output");
    inspect->callback([&] {
        BundleManifest m = inspect_bundle_file(ins_file);
        json j = json::parse(to_string(Bytes(m.canonical_bytes())));
        if (ins_json) {
            std::cout << j.dump(2) << std::endl;
        } else {
            std::cout << "bundle " << m.bundle_id << "\n  created  "
                      << m.created_at << "\n  level    "
                      << security_level_name(m.security_level) << "\n  cipher   "
                      << m.cipher_suite << "\n  payload  " << m.payload_size
                      << " bytes\n  task     "
                      << task_kind_name(m.task_spec.kind) << std::endl;
        }
    });

    // ---- image ----
    auto* image = app.add_subcommand("image", "sector-encrypted data images");
    auto* img_create = image->add_subcommand("create", "create an image");
    std::string imc_out, imc_cipher = "AES-XTS-128", imc_key_id, imc_in;
    std::uint64_t imc_sectors = 0;
    bool imc_local = false;
    img_create->add_option("--out", imc_out)->required();
    img_create->add_option("--sectors", imc_sectors, "sector count (4096-byte sectors)");
    img_create->add_option("--cipher", imc_cipher, "AES-XTS-128|AES-XTS-256");
    img_create->add_option("--key-id", imc_key_id, "vault key id (default: cached key)");
    img_create->add_flag("--local-key", imc_local,
                         "wrap under the locally held result keypair instead of a "
                         "vault key (enables offline image put/get)");
    img_create->add_option("--in", imc_in, "file with initial content");
    img_create->callback([&] {
        Bytes content;
        if (!imc_in.empty()) content = io::read_file(imc_in);
        std::uint64_t sectors = imc_sectors;
        if (sectors == 0)
            sectors = std::max<std::uint64_t>(
                1, (content.size() + kSectorSize - 1) / kSectorSize);
        std::string key_id;
        PublicKey pub;
        if (imc_local) {
            pub = PublicKey::from_pem(ctx.result_public_pem());
            key_id = "local-result";
        } else {
            key_id = imc_key_id.empty() ? ctx.default_key_id() : imc_key_id;
            pub = ctx.resolve_bundle_pub(key_id);
        }
        create_image(imc_out, sectors, xts_kind_from_name(imc_cipher), pub, key_id,
                     content);
        std::cout << "image " << imc_out << " created: " << sectors
                  << " sectors, " << imc_cipher << std::endl;
    });

    auto* img_put = image->add_subcommand("put", "write sectors into an image");
    std::string imp_image, imp_key_pem, imp_in;
    std::uint64_t imp_at = 0;
    img_put->add_option("--image", imp_image)->required();
    img_put->add_option("--key-pem", imp_key_pem, "private key PEM (locally keyed images)")
        ->required();
    img_put->add_option("--at", imp_at, "first sector index");
    img_put->add_option("--in", imp_in, "data file")->required();
    img_put->callback([&] {
        PrivateKey priv = PrivateKey::from_pem(to_string(io::read_file(imp_key_pem)));
        Bytes data = io::read_file(imp_in);
        data.resize(((data.size() + kSectorSize - 1) / kSectorSize) * kSectorSize, 0);
        ImageHandle img = open_image(imp_image, priv);
        img.write_sectors(imp_at, data);
        std::cout << "wrote " << data.size() / kSectorSize << " sectors at "
                  << imp_at << std::endl;
    });

    auto* img_get = image->add_subcommand("get", "read sectors from an image");
    std::string img_image, img_key_pem, img_out;
    std::uint64_t img_at = 0, img_count = 1;
    img_get->add_option("--image", img_image)->required();
    img_get->add_option("--key-pem", img_key_pem)->required();
    img_get->add_option("--at", img_at, "first sector index");
    img_get->add_option("--count", img_count, "sector count");
    img_get->add_option("--out", img_out, "output file")->required();
    img_get->callback([&] {
        PrivateKey priv = PrivateKey::from_pem(to_string(io::read_file(img_key_pem)));
        ImageHandle img = open_image(img_image, priv);
        Bytes data = img.read_sectors(img_at, img_count);
        io::write_file(img_out, data);
        std::cout << "read " << img_count << " sectors to " << img_out << std::endl;
    });

    // ---- submit ----
    auto* submit = app.add_subcommand("submit", "submit a bundle for execution");
    std::string sub_bundle;
    std::vector<std::string> sub_images;
    std::uint32_t sub_nodes = 1, sub_procs = 1;
    bool sub_json = false;
    submit->add_option("bundle", sub_bundle, "bundle file")->required();
    submit->add_option("--image", sub_images, "data image file (repeatable)");
    submit->add_option("--nodes", sub_nodes, "node count");
    submit->add_option("--procs", sub_procs, "processes per node");
    submit->add_flag("--json", sub_json);
    submit->callback([&] {
        Bytes bundle = io::read_file(sub_bundle);
        std::vector<Bytes> images;
        for (const auto& path : sub_images) images.push_back(io::read_file(path));
        auto client = ctx.scheduler_client();
        std::string job_id = client.submit(bundle, images, sub_nodes, sub_procs,
                                           ctx.result_public_pem());
        if (sub_json)
            std::cout << json{{"job_id", job_id}}.dump() << std::endl;
        else
            std::cout << job_id << std::endl;
    });

    // ---- status ----
    auto* status = app.add_subcommand("status", "query job status");
    std::string st_job;
    bool st_json = false;
    status->add_option("job_id", st_job)->required();
    status->add_flag("--json", st_json);
    status->callback([&] {
        auto client = ctx.scheduler_client();
        json view = client.status(st_job);
        if (st_json) {
            std::cout << view.dump(2) << std::endl;
        } else {
            std::cout << view.at("job_id").get<std::string>() << " "
                      << view.at("state").get<std::string>();
            std::string reason = view.value("failure_reason", "");
            if (!reason.empty()) std::cout << " (" << reason << ")";
            std::cout << std::endl;
        }
    });

    // ---- fetch ----
    auto* fetch = app.add_subcommand("fetch", "download and decrypt job results");
    std::string fe_job, fe_out;
    bool fe_json = false;
    fetch->add_option("job_id", fe_job)->required();
    fetch->add_option("--out", fe_out, "output directory")->required();
    fetch->add_flag("--json", fe_json);
    fetch->callback([&] {
        auto client = ctx.scheduler_client();
        auto result = client.fetch(fe_job);
        PrivateKey priv = ctx.result_private_key();
        MemoryTree merged;
        for (const Bytes& sealed : result.sealed_results) {
            VerifiedWorkflow wf = unseal_bundle(sealed, priv);
            merged.merge(wf.tree);
        }
        write_tree_to_dir(merged, fe_out);
        if (fe_json)
            std::cout << json{{"job_id", fe_job},
                              {"files", merged.files.size()},
                              {"reports", result.reports}}
                             .dump(2)
                      << std::endl;
        else
            std::cout << "fetched " << merged.files.size() << " files to "
                      << fe_out << std::endl;
    });

    // ---- bench ----
    auto* bench = app.add_subcommand("bench", "encryption overhead benchmarks");
    auto* bench_io = bench->add_subcommand("io", "I/O bandwidth grid");
    std::string bio_matrix, bio_out;
    bench_io->add_option("--matrix", bio_matrix, "matrix JSON file");
    bench_io->add_option("--out", bio_out, "output directory")->required();
    bench_io->callback([&] {
        auto client = ctx.scheduler_client();
        auto keysvc = ctx.keysvc_client();
        json issued = keysvc.issue_keypair();
        KeyPair result = generate_keypair();

        BenchContext bctx;
        bctx.client = &client;
        bctx.key_id = issued.at("key_id").get<std::string>();
        bctx.bundle_pub =
            PublicKey::from_pem(issued.at("public_pem").get<std::string>());
        bctx.result_pub_pem = result.public_part.to_pem();
        bctx.result_priv = result.private_part;

        BenchMatrix matrix;
        if (!bio_matrix.empty())
            matrix = BenchMatrix::from_json(
                json::parse(to_string(io::read_file(bio_matrix))));
        BenchReport report = run_io_matrix(bctx, matrix);
        json summary = io_overhead_summary(report, matrix);
        emit_report(report, bio_out, "io", summary);
        std::cout << "io bench complete: " << report.rows.size() << " rows -> "
                  << bio_out << "\n"
                  << summary.dump(2) << std::endl;
    });

    auto* bench_compute = bench->add_subcommand("compute", "execution time comparison");
    std::string bco_out, bco_procs = "1,2,4,8,10", bco_matrix;
    double bco_seconds = 5.0;
    std::uint64_t bco_dim = 192;
    bench_compute->add_option("--out", bco_out)->required();
    bench_compute->add_option("--matrix", bco_matrix,
                              "plan JSON file (process_counts, matrix_dim, "
                              "iterations, factor_rank, seed)");
    bench_compute->add_option("--procs", bco_procs, "comma-separated process counts");
    bench_compute->add_option("--seconds", bco_seconds, "target serial workload seconds");
    bench_compute->add_option("--dim", bco_dim, "factorization matrix dimension");
    bench_compute->callback([&] {
        auto client = ctx.scheduler_client();
        auto keysvc = ctx.keysvc_client();
        json issued = keysvc.issue_keypair();
        KeyPair result = generate_keypair();

        BenchContext bctx;
        bctx.client = &client;
        bctx.key_id = issued.at("key_id").get<std::string>();
        bctx.bundle_pub =
            PublicKey::from_pem(issued.at("public_pem").get<std::string>());
        bctx.result_pub_pem = result.public_part.to_pem();
        bctx.result_priv = result.private_part;
        bctx.job_timeout = 1200.0;

        ComputeBenchPlan plan;
        plan.matrix_dim = bco_dim;
        plan.process_counts.clear();
        std::stringstream ss(bco_procs);
        std::string tok;
        while (std::getline(ss, tok, ','))
            plan.process_counts.push_back(static_cast<std::uint32_t>(std::stoul(tok)));
        plan.iterations = 0;
        if (!bco_matrix.empty()) {
            json j = json::parse(to_string(io::read_file(bco_matrix)));
            if (j.contains("process_counts"))
                j.at("process_counts").get_to(plan.process_counts);
            plan.matrix_dim = j.value("matrix_dim", plan.matrix_dim);
            plan.iterations = j.value("iterations", std::uint64_t{0});
            plan.factor_rank = j.value("factor_rank", plan.factor_rank);
            plan.seed = j.value("seed", plan.seed);
        }
        if (plan.iterations == 0)
            plan.iterations = calibrate_compute_iterations(plan.matrix_dim,
                                                           plan.factor_rank,
                                                           plan.seed, bco_seconds);
        BenchReport report = run_compute_matrix(bctx, plan);
        json summary = compute_overhead_summary(report, plan);
        emit_report(report, bco_out, "compute", summary);
        std::cout << "compute bench complete -> " << bco_out << "\n"
                  << summary.dump(2) << std::endl;
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
