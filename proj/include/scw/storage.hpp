// Copyright 2026 The scw Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tiered blob store. The local tier is a plain directory for content that is
// already encrypted by construction (bundles, images). The secure tier adds
// sector encryption under a per-domain master key and organisation-scoped
// access control, modelling the long-term storage system's isolated domains.
//
// Layout: <root>/local/<blob_id> (+ .meta.json sidecar)
//         <root>/secure/<domain>/.domain.json
//         <root>/secure/<domain>/<blob_id> (+ .meta.json sidecar)

#pragma once

#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>

#include "json.hpp"
#include "scw/crypto.hpp"
#include "scw/errors.hpp"
#include "scw/io.hpp"
#include "scw/principal.hpp"
#include "scw/serde.hpp"

namespace scw {

enum class Tier { local, secure };

inline const char* tier_name(Tier t) { return t == Tier::local ? "local" : "secure"; }

inline Tier tier_from_name(const std::string& name) {
    if (name == "local") return Tier::local;
    if (name == "secure") return Tier::secure;
    throw FormatError("unknown tier: " + name);
}

struct BlobRef {
    Tier tier = Tier::local;
    std::string domain;  // secure tier only
    std::string blob_id;
    Digest digest;
    std::uint64_t length = 0;

    json to_json() const {
        return json{{"tier", tier_name(tier)},
                    {"domain", domain},
                    {"blob_id", blob_id},
                    {"digest", digest.hex()},
                    {"length", length}};
    }

    static BlobRef from_json(const json& j) {
        BlobRef ref;
        ref.tier = tier_from_name(j.at("tier").get<std::string>());
        ref.domain = j.value("domain", "");
        ref.blob_id = j.at("blob_id").get<std::string>();
        ref.digest = Digest::from_hex(j.at("digest").get<std::string>());
        ref.length = j.at("length").get<std::uint64_t>();
        return ref;
    }
};

class BlobStore {
public:
    BlobStore(std::string root, KeyPair operator_keys)
        : root_(std::move(root)), operator_keys_(std::move(operator_keys)) {
        io::ensure_dir(root_ + "/local");
        io::ensure_dir(root_ + "/secure");
        load_domains();
    }

    // Test hook: lets the migration suite corrupt bytes in the copy path.
    std::function<void(Bytes&)> migrate_copy_hook;

    void create_domain(const std::string& name, const std::string& organisation,
                       std::vector<std::string> allowed_principals = {},
                       XtsCipherKind cipher = XtsCipherKind::xts256) {
        std::lock_guard lock(mutex_);
        if (domains_.count(name))
            throw ConflictError("domain already exists: " + name);
        if (name.empty() || name.find('/') != std::string::npos)
            throw ValidationError("invalid domain name");

        DomainInfo info;
        info.name = name;
        info.organisation = organisation;
        info.allowed = std::move(allowed_principals);
        info.cipher = cipher;
        Dek master = Dek::generate(DekPurpose::image, xts_key_size(cipher));
        info.wrapped_master = wrap_dek(master, operator_keys_.public_part,
                                       operator_keys_.key_id);
        info.master = SecureBuffer(master.bytes().data(), master.size());
        master.destroy();

        io::ensure_dir(domain_dir(name));
        json j{{"name", info.name},
               {"organisation", info.organisation},
               {"allowed", info.allowed},
               {"cipher", xts_cipher_name(info.cipher)},
               {"master_key", wrapped_key_to_json(info.wrapped_master)}};
        std::string s = j.dump(2);
        io::write_file_atomic(domain_dir(name) + "/.domain.json", as_bytes(s));
        domains_.emplace(name, std::move(info));
    }

    std::vector<std::string> domains() const {
        std::lock_guard lock(mutex_);
        std::vector<std::string> out;
        for (const auto& [name, info] : domains_) out.push_back(name);
        return out;
    }

    BlobRef put(Tier tier, const std::string& domain, ByteView data,
                const Principal& principal) {
        BlobRef ref;
        ref.tier = tier;
        ref.blob_id = uuid4();
        ref.digest = digest(data);
        ref.length = data.size();

        if (tier == Tier::local) {
            io::write_file_atomic(local_path(ref.blob_id), data);
            write_sidecar(local_path(ref.blob_id), ref, 0);
            return ref;
        }

        ref.domain = domain;
        std::uint64_t tweak_base = 0;
        Bytes ciphertext;
        {
            std::lock_guard lock(mutex_);
            DomainInfo& info = domain_for(domain, principal);
            tweak_base = tweak_base_for(ref.blob_id);
            ciphertext = encrypt_blob(info, tweak_base, data);
        }
        io::write_file_atomic(secure_path(domain, ref.blob_id), ciphertext);
        write_sidecar(secure_path(domain, ref.blob_id), ref, tweak_base);
        return ref;
    }

    Bytes get(const BlobRef& ref, const Principal& principal) {
        Bytes content;
        if (ref.tier == Tier::local) {
            content = read_blob_file(local_path(ref.blob_id));
        } else {
            Bytes ciphertext = read_blob_file(secure_path(ref.domain, ref.blob_id));
            std::lock_guard lock(mutex_);
            DomainInfo& info = domain_for(ref.domain, principal);
            content = decrypt_blob(info, tweak_base_for(ref.blob_id), ciphertext,
                                   ref.length);
        }
        if (content.size() != ref.length || digest(content) != ref.digest)
            throw CorruptionError("blob " + ref.blob_id + " failed digest verification");
        return content;
    }

    // Moves a local blob into a secure domain; the local copy survives any
    // failure and is removed only after the secure copy verifies.
    BlobRef migrate(const BlobRef& ref, const std::string& domain,
                    const Principal& principal) {
        if (ref.tier != Tier::local)
            throw ValidationError("migrate source must be a local blob");
        {
            std::lock_guard lock(mutex_);
            domain_for(domain, principal);  // access check before any copy
        }
        Bytes content = get(ref, principal);
        if (migrate_copy_hook) migrate_copy_hook(content);

        BlobRef secure_ref;
        try {
            secure_ref = put(Tier::secure, domain, content, principal);
            Bytes back = get(secure_ref, principal);
            if (back.size() != ref.length || digest(back) != ref.digest)
                throw CorruptionError("secure copy does not match source");
        } catch (const Error& e) {
            remove_quiet(secure_path(domain, secure_ref.blob_id));
            throw MigrationError(std::string("migration failed, local copy retained: ") +
                                 e.what());
        }
        remove_quiet(local_path(ref.blob_id));
        remove_quiet(local_path(ref.blob_id) + ".meta.json");
        BlobRef out = secure_ref;
        out.digest = ref.digest;
        out.length = ref.length;
        return out;
    }

    bool exists(const BlobRef& ref) const {
        std::string path = ref.tier == Tier::local
                               ? local_path(ref.blob_id)
                               : secure_path(ref.domain, ref.blob_id);
        return std::filesystem::exists(path);
    }

    const std::string& root() const { return root_; }

private:
    struct DomainInfo {
        std::string name;
        std::string organisation;
        std::vector<std::string> allowed;
        XtsCipherKind cipher = XtsCipherKind::xts256;
        WrappedKey wrapped_master;
        SecureBuffer master;  // unwrapped lazily, memory only
    };

    std::string local_path(const std::string& blob_id) const {
        return root_ + "/local/" + blob_id;
    }
    std::string domain_dir(const std::string& domain) const {
        return root_ + "/secure/" + domain;
    }
    std::string secure_path(const std::string& domain, const std::string& blob_id) const {
        return domain_dir(domain) + "/" + blob_id;
    }

    static std::uint64_t tweak_base_for(const std::string& blob_id) {
        // Per-blob tweak offset keeps (key, tweak) pairs unique across blobs
        // sharing a domain master key.
        Digest d = digest(as_bytes(blob_id));
        std::uint64_t base = 0;
        for (int i = 0; i < 8; ++i)
            base |= static_cast<std::uint64_t>(d.bytes[static_cast<std::size_t>(i)]) << (8 * i);
        return base;
    }

    DomainInfo& domain_for(const std::string& domain, const Principal& principal) {
        auto it = domains_.find(domain);
        if (it == domains_.end()) throw NotFoundError("no such domain: " + domain);
        DomainInfo& info = it->second;
        bool member = principal.organisation == info.organisation &&
                      (info.allowed.empty() ||
                       std::find(info.allowed.begin(), info.allowed.end(),
                                 principal.name) != info.allowed.end());
        if (!member)
            throw AuthError("principal " + principal.name +
                            " is not a member of domain " + domain);
        if (info.master.empty()) {
            Dek master = unwrap_dek(info.wrapped_master, operator_keys_.private_part,
                                    DekPurpose::image);
            info.master = SecureBuffer(master.bytes().data(), master.size());
            master.destroy();
        }
        return info;
    }

    Bytes encrypt_blob(DomainInfo& info, std::uint64_t tweak_base, ByteView data) {
        Dek key(info.master.clone(), DekPurpose::image);
        XtsCipher xts(key);
        std::uint64_t sectors = (data.size() + kSectorSize - 1) / kSectorSize;
        if (sectors == 0) sectors = 1;
        Bytes out;
        out.reserve(sectors * kSectorSize);
        Bytes sector(kSectorSize, 0);
        for (std::uint64_t i = 0; i < sectors; ++i) {
            std::size_t off = static_cast<std::size_t>(i * kSectorSize);
            std::size_t len = off < data.size()
                                  ? std::min(kSectorSize, data.size() - off)
                                  : 0;
            std::fill(sector.begin(), sector.end(), 0);
            if (len > 0) std::memcpy(sector.data(), data.data() + off, len);
            Bytes ct = xts.encrypt(tweak_base + i, sector);
            out.insert(out.end(), ct.begin(), ct.end());
        }
        OPENSSL_cleanse(sector.data(), sector.size());
        return out;
    }

    Bytes decrypt_blob(DomainInfo& info, std::uint64_t tweak_base, ByteView ciphertext,
                       std::uint64_t length) {
        if (ciphertext.size() % kSectorSize != 0)
            throw CorruptionError("secure blob is not sector aligned");
        Dek key(info.master.clone(), DekPurpose::image);
        XtsCipher xts(key);
        Bytes out;
        out.reserve(ciphertext.size());
        std::uint64_t sectors = ciphertext.size() / kSectorSize;
        for (std::uint64_t i = 0; i < sectors; ++i) {
            Bytes pt = xts.decrypt(tweak_base + i,
                                   ciphertext.subspan(i * kSectorSize, kSectorSize));
            out.insert(out.end(), pt.begin(), pt.end());
        }
        if (length > out.size())
            throw CorruptionError("secure blob shorter than recorded length");
        out.resize(length);
        return out;
    }

    Bytes read_blob_file(const std::string& path) const {
        try {
            return io::read_file(path);
        } catch (const NotFoundError&) {
            throw NotFoundError("no such blob: " + path);
        }
    }

    void write_sidecar(const std::string& blob_path, const BlobRef& ref,
                       std::uint64_t tweak_base) {
        json j = ref.to_json();
        if (ref.tier == Tier::secure) j["tweak_base"] = tweak_base;
        std::string s = j.dump();
        io::write_file_atomic(blob_path + ".meta.json", as_bytes(s));
    }

    static void remove_quiet(const std::string& path) {
        std::error_code ec;
        std::filesystem::remove(path, ec);
    }

    void load_domains() {
        namespace fs = std::filesystem;
        std::error_code ec;
        for (const auto& entry : fs::directory_iterator(root_ + "/secure", ec)) {
            if (!entry.is_directory()) continue;
            std::string meta = entry.path().string() + "/.domain.json";
            if (!fs::exists(meta)) continue;
            json j = json::parse(to_string(io::read_file(meta)));
            DomainInfo info;
            info.name = j.at("name").get<std::string>();
            info.organisation = j.at("organisation").get<std::string>();
            j.at("allowed").get_to(info.allowed);
            info.cipher = xts_kind_from_name(j.at("cipher").get<std::string>());
            info.wrapped_master = wrapped_key_from_json(j.at("master_key"));
            domains_.emplace(info.name, std::move(info));
        }
    }

    std::string root_;
    KeyPair operator_keys_;
    mutable std::mutex mutex_;
    std::map<std::string, DomainInfo> domains_;
};

}  // namespace scw
