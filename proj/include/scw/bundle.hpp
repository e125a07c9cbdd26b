// Copyright 2026 The scw Authors
// SPDX-License-Identifier: Apache-2.0
//
// Encrypted workflow bundle: a cleartext JSON manifest followed by sealed
// payload chunks whose associated data binds the manifest digest and chunk
// index. File layout (big-endian integers):
//   magic "SCWB" | version u16 | manifest length u32 | canonical manifest
//   | per chunk: record length u32, nonce (12), ciphertext||tag

#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "scw/archive.hpp"
#include "scw/crypto.hpp"
#include "scw/errors.hpp"
#include "scw/io.hpp"
#include "scw/serde.hpp"
#include "scw/tasks.hpp"

namespace scw {

constexpr const char* kBundleMagic = "SCWB";
constexpr std::uint16_t kBundleVersion = 1;
constexpr const char* kPlainCipherSuite = "NONE";  // bench control path only

enum class SecurityLevel { standard, sev };

inline const char* security_level_name(SecurityLevel l) {
    return l == SecurityLevel::standard ? "standard" : "sev";
}

inline SecurityLevel security_level_from_name(const std::string& name) {
    if (name == "standard") return SecurityLevel::standard;
    if (name == "sev") return SecurityLevel::sev;
    throw FormatError("unknown security level: " + name);
}

struct BundleManifest {
    std::string bundle_id;
    std::string created_at;
    std::string entrypoint;
    TaskSpec task_spec;
    Digest payload_digest;
    std::uint64_t payload_size = 0;
    std::uint64_t chunk_size = kChunkSize;
    std::string cipher_suite = kBundleCipherSuite;
    WrappedKey wrapped_dek;
    std::string key_id;
    SecurityLevel security_level = SecurityLevel::standard;

    bool encrypted() const { return cipher_suite != kPlainCipherSuite; }

    // Canonical encoding: compact JSON with lexicographically sorted keys.
    // Its digest is the associated data binding every payload chunk.
    Bytes canonical_bytes() const {
        json j{{"bundle_id", bundle_id},
               {"chunk_size", chunk_size},
               {"cipher_suite", cipher_suite},
               {"created_at", created_at},
               {"entrypoint", entrypoint},
               {"key_id", key_id},
               {"payload_digest", payload_digest.hex()},
               {"payload_size", payload_size},
               {"security_level", security_level_name(security_level)},
               {"task_spec", task_spec.to_json()}};
        j["wrapped_dek"] = encrypted() ? wrapped_key_to_json(wrapped_dek)
                                       : json(nullptr);
        std::string s = j.dump();
        return Bytes(s.begin(), s.end());
    }

    static BundleManifest parse(ByteView bytes) {
        json j;
        try {
            j = json::parse(bytes.begin(), bytes.end());
        } catch (const json::exception& e) {
            throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
        }
        try {
            BundleManifest m;
            m.bundle_id = j.at("bundle_id").get<std::string>();
            m.created_at = j.at("created_at").get<std::string>();
            m.entrypoint = j.at("entrypoint").get<std::string>();
            m.task_spec = TaskSpec::from_json(j.at("task_spec"));
            m.payload_digest = Digest::from_hex(j.at("payload_digest").get<std::string>());
            m.payload_size = j.at("payload_size").get<std::uint64_t>();
            m.chunk_size = j.at("chunk_size").get<std::uint64_t>();
            m.cipher_suite = j.at("cipher_suite").get<std::string>();
            m.security_level =
                security_level_from_name(j.at("security_level").get<std::string>());
            m.key_id = j.at("key_id").get<std::string>();
            if (m.cipher_suite == kBundleCipherSuite) {
                m.wrapped_dek = wrapped_key_from_json(j.at("wrapped_dek"));
            } else if (m.cipher_suite != kPlainCipherSuite) {
                throw FormatError("unsupported cipher suite: " + m.cipher_suite);
            }
            if (m.chunk_size != kChunkSize)
                throw FormatError("unsupported chunk size");
            return m;
        } catch (const json::exception& e) {
            throw FormatError(std::string("manifest field error: ") + e.what());
        } catch (const ValidationError& e) {
            throw FormatError(std::string("manifest task spec invalid: ") + e.what());
        }
    }
};

struct EncodedBundle {
    Bytes bytes;
};

struct VerifiedWorkflow {
    BundleManifest manifest;
    MemoryTree tree;
};

namespace bundle_detail {

struct RawBundle {
    Bytes manifest_bytes;
    std::vector<SealedChunk> chunks;  // for NONE suite, ciphertext is raw data
};

inline RawBundle parse_container(ByteView file) {
    std::size_t pos = 0;
    auto need = [&](std::size_t n, const char* what) {
        if (pos + n > file.size())
            throw FormatError(std::string("truncated bundle: ") + what);
    };
    need(4, "magic");
    if (std::memcmp(file.data(), kBundleMagic, 4) != 0)
        throw FormatError("not an scw bundle (bad magic)");
    pos = 4;
    need(2, "version");
    if (get_u16_be(file.data() + pos) != kBundleVersion)
        throw FormatError("unsupported bundle version");
    pos += 2;
    need(4, "manifest length");
    std::uint32_t mlen = get_u32_be(file.data() + pos);
    pos += 4;
    need(mlen, "manifest");
    RawBundle raw;
    raw.manifest_bytes.assign(file.begin() + static_cast<std::ptrdiff_t>(pos),
                              file.begin() + static_cast<std::ptrdiff_t>(pos + mlen));
    pos += mlen;

    while (pos < file.size()) {
        need(4, "chunk length");
        std::uint32_t rec_len = get_u32_be(file.data() + pos);
        pos += 4;
        if (rec_len < kGcmNonceSize)
            throw FormatError("chunk record shorter than nonce");
        need(rec_len, "chunk record");
        SealedChunk chunk;
        std::memcpy(chunk.nonce.data(), file.data() + pos, kGcmNonceSize);
        chunk.ciphertext.assign(
            file.begin() + static_cast<std::ptrdiff_t>(pos + kGcmNonceSize),
            file.begin() + static_cast<std::ptrdiff_t>(pos + rec_len));
        pos += rec_len;
        raw.chunks.push_back(std::move(chunk));
    }
    return raw;
}

inline Bytes encode_container(ByteView manifest_bytes,
                              const std::vector<SealedChunk>& chunks) {
    Bytes out;
    out.insert(out.end(), kBundleMagic, kBundleMagic + 4);
    put_u16_be(out, kBundleVersion);
    put_u32_be(out, static_cast<std::uint32_t>(manifest_bytes.size()));
    out.insert(out.end(), manifest_bytes.begin(), manifest_bytes.end());
    for (const SealedChunk& chunk : chunks) {
        put_u32_be(out, static_cast<std::uint32_t>(kGcmNonceSize +
                                                   chunk.ciphertext.size()));
        out.insert(out.end(), chunk.nonce.begin(), chunk.nonce.end());
        out.insert(out.end(), chunk.ciphertext.begin(), chunk.ciphertext.end());
    }
    return out;
}

}  // namespace bundle_detail

struct PackageOptions {
    std::string entrypoint = "main";
    TaskSpec task_spec;
    SecurityLevel security_level = SecurityLevel::standard;
    // Bench control path: store the payload unencrypted. Never enabled by
    // production configuration; unsealing such a bundle requires an explicit
    // opt-in on the worker as well.
    bool plaintext_payload = false;
};

// Seals an in-memory tree into a bundle. The plaintext archive exists only
// in memory and is wiped before returning.
inline Bytes package_tree(const MemoryTree& tree, const PublicKey& pub,
                          const std::string& key_id, const PackageOptions& opts) {
    Bytes archive = pack_tree(tree);

    BundleManifest manifest;
    manifest.bundle_id = uuid4();
    manifest.created_at = rfc3339_now();
    manifest.entrypoint = opts.entrypoint;
    manifest.task_spec = opts.task_spec;
    manifest.payload_digest = digest(archive);
    manifest.payload_size = archive.size();
    manifest.security_level = opts.security_level;
    manifest.key_id = key_id;

    std::vector<SealedChunk> chunks;
    if (opts.plaintext_payload) {
        manifest.cipher_suite = kPlainCipherSuite;
        std::size_t n = chunk_count_for(archive.size());
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t off = i * kChunkSize;
            std::size_t len = std::min(kChunkSize, archive.size() - off);
            SealedChunk c;
            c.ciphertext.assign(archive.begin() + static_cast<std::ptrdiff_t>(off),
                                archive.begin() + static_cast<std::ptrdiff_t>(off + len));
            chunks.push_back(std::move(c));
        }
        Bytes manifest_bytes = manifest.canonical_bytes();
        Bytes out = bundle_detail::encode_container(manifest_bytes, chunks);
        OPENSSL_cleanse(archive.data(), archive.size());
        return out;
    }

    Dek dek = Dek::generate(DekPurpose::bundle);
    manifest.wrapped_dek = wrap_dek(dek, pub, key_id);
    Bytes manifest_bytes = manifest.canonical_bytes();
    Digest manifest_digest = digest(manifest_bytes);
    chunks = seal_payload(archive, dek, manifest_digest);
    OPENSSL_cleanse(archive.data(), archive.size());
    dek.destroy();
    return bundle_detail::encode_container(manifest_bytes, chunks);
}

inline void package_dir_to_file(const std::string& dir, const std::string& out_path,
                                const PublicKey& pub, const std::string& key_id,
                                const PackageOptions& opts) {
    MemoryTree tree = load_tree_from_dir(dir);
    Bytes bundle = package_tree(tree, pub, key_id, opts);
    tree.wipe();
    io::write_file_atomic(out_path, bundle);
}

// Reads the manifest without touching key material.
inline BundleManifest inspect_bundle(ByteView file) {
    bundle_detail::RawBundle raw = bundle_detail::parse_container(file);
    BundleManifest manifest = BundleManifest::parse(raw.manifest_bytes);
    if (raw.chunks.size() != chunk_count_for(manifest.payload_size))
        throw FormatError("chunk count does not match declared payload size");
    return manifest;
}

inline BundleManifest inspect_bundle_file(const std::string& path) {
    return inspect_bundle(io::read_file(path));
}

// Opens a bundle whose DEK was already obtained (workers receive it through
// a key-service lease rather than holding any private key).
inline VerifiedWorkflow unseal_bundle_with_dek(ByteView file, const Dek* dek,
                                               bool allow_plaintext = false);

// Opens a bundle entirely in memory: unwraps the DEK with the caller's
// private key, authenticates every chunk against the manifest digest, then
// re-verifies the whole payload digest before handing back the tree.
inline VerifiedWorkflow unseal_bundle(ByteView file, const PrivateKey& priv,
                                      bool allow_plaintext = false) {
    bundle_detail::RawBundle raw = bundle_detail::parse_container(file);
    BundleManifest manifest = BundleManifest::parse(raw.manifest_bytes);
    if (manifest.encrypted()) {
        Dek dek = unwrap_dek(manifest.wrapped_dek, priv, DekPurpose::bundle);
        VerifiedWorkflow out = unseal_bundle_with_dek(file, &dek, allow_plaintext);
        dek.destroy();
        return out;
    }
    return unseal_bundle_with_dek(file, nullptr, allow_plaintext);
}

inline VerifiedWorkflow unseal_bundle_with_dek(ByteView file, const Dek* dek,
                                               bool allow_plaintext) {
    bundle_detail::RawBundle raw = bundle_detail::parse_container(file);
    BundleManifest manifest = BundleManifest::parse(raw.manifest_bytes);
    if (raw.chunks.size() != chunk_count_for(manifest.payload_size))
        throw FormatError("chunk count does not match declared payload size");

    Bytes payload;
    if (!manifest.encrypted()) {
        if (!allow_plaintext)
            throw FormatError("plaintext bundles are not accepted by this configuration");
        for (const SealedChunk& c : raw.chunks)
            payload.insert(payload.end(), c.ciphertext.begin(), c.ciphertext.end());
    } else {
        if (dek == nullptr)
            throw ValidationError("encrypted bundle requires a DEK");
        Digest manifest_digest = digest(raw.manifest_bytes);
        payload = open_payload(raw.chunks, *dek, manifest_digest);
    }

    if (payload.size() != manifest.payload_size) {
        OPENSSL_cleanse(payload.data(), payload.size());
        throw IntegrityError(IntegrityError::Kind::payload_digest,
                             "payload size does not match manifest");
    }
    if (digest(payload) != manifest.payload_digest) {
        OPENSSL_cleanse(payload.data(), payload.size());
        throw IntegrityError(IntegrityError::Kind::payload_digest,
                             "payload digest mismatch after open");
    }

    VerifiedWorkflow out;
    out.manifest = std::move(manifest);
    out.tree = unpack_tree(payload);
    OPENSSL_cleanse(payload.data(), payload.size());
    return out;
}

inline VerifiedWorkflow unseal_bundle_file(const std::string& path,
                                           const PrivateKey& priv,
                                           bool allow_plaintext = false) {
    return unseal_bundle(io::read_file(path), priv, allow_plaintext);
}

}  // namespace scw
