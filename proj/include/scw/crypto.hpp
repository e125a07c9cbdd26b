// Copyright 2026 The scw Authors
// SPDX-License-Identifier: Apache-2.0
//
// Cryptographic layer used by every other component: RSA-OAEP key wrapping,
// chunked AEAD payload sealing, XTS sector encryption (IEEE 1619 tweak
// convention) and SHA-256 digests. Composes OpenSSL primitives only.

#pragma once

#include <openssl/bio.h>
#include <openssl/err.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/pem.h>
#include <openssl/rsa.h>

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "scw/bytes.hpp"
#include "scw/errors.hpp"

namespace scw {

constexpr std::size_t kChunkSize = 1024 * 1024;  // payload chunking granularity
constexpr std::size_t kGcmNonceSize = 12;
constexpr std::size_t kGcmTagSize = 16;
constexpr std::size_t kSectorSize = 4096;
constexpr int kRsaModulusBits = 3072;
constexpr std::size_t kRsaCiphertextSize = kRsaModulusBits / 8;  // 384
constexpr const char* kWrapAlgorithm = "OAEP-SHA256";
constexpr const char* kBundleCipherSuite = "AES-256-GCM";

namespace detail {

inline std::string ossl_error_text(const std::string& prefix) {
    unsigned long e = ERR_get_error();
    char buf[256] = {0};
    if (e != 0) ERR_error_string_n(e, buf, sizeof(buf));
    ERR_clear_error();
    return prefix + (e != 0 ? std::string(": ") + buf : "");
}

struct EvpMdCtxFree {
    void operator()(EVP_MD_CTX* p) const { EVP_MD_CTX_free(p); }
};
struct EvpCipherCtxFree {
    void operator()(EVP_CIPHER_CTX* p) const { EVP_CIPHER_CTX_free(p); }
};
struct EvpPkeyCtxFree {
    void operator()(EVP_PKEY_CTX* p) const { EVP_PKEY_CTX_free(p); }
};
struct BioFree {
    void operator()(BIO* p) const { BIO_free(p); }
};

using MdCtx = std::unique_ptr<EVP_MD_CTX, EvpMdCtxFree>;
using CipherCtx = std::unique_ptr<EVP_CIPHER_CTX, EvpCipherCtxFree>;
using PkeyCtx = std::unique_ptr<EVP_PKEY_CTX, EvpPkeyCtxFree>;
using Bio = std::unique_ptr<BIO, BioFree>;

inline std::shared_ptr<EVP_PKEY> wrap_pkey(EVP_PKEY* p) {
    return std::shared_ptr<EVP_PKEY>(p, EVP_PKEY_free);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Digests
// ---------------------------------------------------------------------------

struct Digest {
    static constexpr const char* kAlgorithm = "SHA-256";
    std::array<std::uint8_t, 32> bytes{};

    std::string hex() const { return to_hex({bytes.data(), bytes.size()}); }

    static Digest from_hex(const std::string& h) {
        Bytes raw = scw::from_hex(h);
        if (raw.size() != 32) throw FormatError("digest must be 32 bytes");
        Digest d;
        std::copy(raw.begin(), raw.end(), d.bytes.begin());
        return d;
    }

    bool operator==(const Digest& other) const { return bytes == other.bytes; }
    bool operator!=(const Digest& other) const { return !(*this == other); }
};

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1)
            throw FatalError("SHA-256 init failed");
    }
    void update(ByteView data) {
        if (!data.empty() &&
            EVP_DigestUpdate(ctx_.get(), data.data(), data.size()) != 1)
            throw FatalError("SHA-256 update failed");
    }
    Digest finish() {
        Digest d;
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx_.get(), d.bytes.data(), &len) != 1 || len != 32)
            throw FatalError("SHA-256 final failed");
        return d;
    }

private:
    detail::MdCtx ctx_;
};

inline Digest digest(ByteView data) {
    Sha256 h;
    h.update(data);
    return h.finish();
}

inline Bytes hmac_sha256(ByteView key, ByteView data) {
    Bytes out(32);
    unsigned int len = 0;
    if (HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()),
             data.data(), data.size(), out.data(), &len) == nullptr ||
        len != 32)
        throw FatalError("HMAC-SHA256 failed");
    return out;
}

// HKDF-style expand built on HMAC-SHA256; enough for channel key derivation.
inline Bytes hkdf_sha256(ByteView secret, ByteView salt, const std::string& info,
                         std::size_t out_len) {
    Bytes prk = hmac_sha256(salt, secret);
    Bytes out;
    Bytes block;
    std::uint8_t counter = 1;
    while (out.size() < out_len) {
        Bytes input = block;
        input.insert(input.end(), info.begin(), info.end());
        input.push_back(counter++);
        block = hmac_sha256({prk.data(), prk.size()}, {input.data(), input.size()});
        out.insert(out.end(), block.begin(), block.end());
    }
    out.resize(out_len);
    return out;
}

// ---------------------------------------------------------------------------
// Data encryption keys
// ---------------------------------------------------------------------------

enum class DekPurpose { bundle, image };

inline const char* dek_purpose_name(DekPurpose p) {
    return p == DekPurpose::bundle ? "bundle" : "image";
}

// Symmetric key protecting one payload or image. Held in a wiping buffer and
// never serialized in cleartext by any module.
class Dek {
public:
    Dek() = default;
    Dek(SecureBuffer bytes, DekPurpose purpose)
        : bytes_(std::move(bytes)), purpose_(purpose) {
        check_length(bytes_.size(), purpose_);
    }

    static Dek generate(DekPurpose purpose, std::size_t len = 32) {
        check_length(len, purpose);
        return Dek(SecureBuffer(random_bytes(len)), purpose);
    }

    ByteView bytes() const { return bytes_.view(); }
    std::size_t size() const { return bytes_.size(); }
    DekPurpose purpose() const { return purpose_; }
    bool destroyed() const { return bytes_.empty(); }

    Dek clone() const { return Dek(bytes_.clone(), purpose_); }

    // Explicit zeroization; the destructor does the same.
    void destroy() { bytes_.wipe(); }

    bool operator==(const Dek& other) const { return bytes_ == other.bytes_; }

private:
    static void check_length(std::size_t len, DekPurpose purpose) {
        if (purpose == DekPurpose::bundle && len != 32)
            throw ValidationError("bundle DEK must be 32 bytes");
        if (purpose == DekPurpose::image && len != 32 && len != 64)
            throw ValidationError("image DEK must be 32 or 64 bytes");
    }

    SecureBuffer bytes_;
    DekPurpose purpose_ = DekPurpose::bundle;
};

// ---------------------------------------------------------------------------
// Asymmetric keys and wrapping
// ---------------------------------------------------------------------------

class PublicKey {
public:
    PublicKey() = default;
    explicit PublicKey(std::shared_ptr<EVP_PKEY> key) : key_(std::move(key)) {}

    bool valid() const { return key_ != nullptr; }
    EVP_PKEY* handle() const { return key_.get(); }

    std::string to_pem() const {
        detail::Bio bio(BIO_new(BIO_s_mem()));
        if (!bio || PEM_write_bio_PUBKEY(bio.get(), key_.get()) != 1)
            throw FatalError("public key PEM encoding failed");
        char* data = nullptr;
        long n = BIO_get_mem_data(bio.get(), &data);
        return std::string(data, static_cast<std::size_t>(n));
    }

    static PublicKey from_pem(const std::string& pem) {
        detail::Bio bio(BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size())));
        EVP_PKEY* raw = PEM_read_bio_PUBKEY(bio.get(), nullptr, nullptr, nullptr);
        if (raw == nullptr)
            throw FormatError(detail::ossl_error_text("invalid public key PEM"));
        return PublicKey(detail::wrap_pkey(raw));
    }

private:
    std::shared_ptr<EVP_PKEY> key_;
};

class PrivateKey {
public:
    PrivateKey() = default;
    explicit PrivateKey(std::shared_ptr<EVP_PKEY> key) : key_(std::move(key)) {}

    bool valid() const { return key_ != nullptr; }
    EVP_PKEY* handle() const { return key_.get(); }

    PublicKey public_part() const {
        // Round-trip through the public PEM encoding strips private components.
        detail::Bio bio(BIO_new(BIO_s_mem()));
        if (!bio || PEM_write_bio_PUBKEY(bio.get(), key_.get()) != 1)
            throw FatalError("public key extraction failed");
        char* data = nullptr;
        long n = BIO_get_mem_data(bio.get(), &data);
        return PublicKey::from_pem(std::string(data, static_cast<std::size_t>(n)));
    }

    std::string to_pem() const {
        detail::Bio bio(BIO_new(BIO_s_mem()));
        if (!bio || PEM_write_bio_PKCS8PrivateKey(bio.get(), key_.get(), nullptr,
                                                  nullptr, 0, nullptr, nullptr) != 1)
            throw FatalError("private key PEM encoding failed");
        char* data = nullptr;
        long n = BIO_get_mem_data(bio.get(), &data);
        return std::string(data, static_cast<std::size_t>(n));
    }

    static PrivateKey from_pem(const std::string& pem) {
        detail::Bio bio(BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size())));
        EVP_PKEY* raw = PEM_read_bio_PrivateKey(bio.get(), nullptr, nullptr, nullptr);
        if (raw == nullptr)
            throw FormatError(detail::ossl_error_text("invalid private key PEM"));
        return PrivateKey(detail::wrap_pkey(raw));
    }

private:
    std::shared_ptr<EVP_PKEY> key_;
};

struct KeyPair {
    std::string key_id;
    PublicKey public_part;
    PrivateKey private_part;
};

inline KeyPair generate_keypair() {
    EVP_PKEY* raw = EVP_PKEY_Q_keygen(nullptr, nullptr, "RSA",
                                      static_cast<size_t>(kRsaModulusBits));
    if (raw == nullptr)
        throw FatalError(detail::ossl_error_text("RSA key generation failed"));
    auto key = detail::wrap_pkey(raw);
    KeyPair kp;
    kp.key_id = uuid4();
    kp.private_part = PrivateKey(key);
    kp.public_part = kp.private_part.public_part();
    return kp;
}

struct WrappedKey {
    std::string key_id;         // id of the wrapping pair
    Bytes ciphertext;           // OAEP-wrapped DEK
    std::string wrap_algorithm = kWrapAlgorithm;
};

inline WrappedKey wrap_dek(const Dek& dek, const PublicKey& pub,
                           const std::string& key_id) {
    detail::PkeyCtx ctx(EVP_PKEY_CTX_new(pub.handle(), nullptr));
    if (!ctx || EVP_PKEY_encrypt_init(ctx.get()) != 1 ||
        EVP_PKEY_CTX_set_rsa_padding(ctx.get(), RSA_PKCS1_OAEP_PADDING) != 1 ||
        EVP_PKEY_CTX_set_rsa_oaep_md(ctx.get(), EVP_sha256()) != 1 ||
        EVP_PKEY_CTX_set_rsa_mgf1_md(ctx.get(), EVP_sha256()) != 1)
        throw FatalError(detail::ossl_error_text("OAEP wrap init failed"));

    std::size_t out_len = 0;
    ByteView in = dek.bytes();
    if (EVP_PKEY_encrypt(ctx.get(), nullptr, &out_len, in.data(), in.size()) != 1)
        throw ValidationError(detail::ossl_error_text("DEK too long for wrapping key"));
    Bytes out(out_len);
    if (EVP_PKEY_encrypt(ctx.get(), out.data(), &out_len, in.data(), in.size()) != 1)
        throw ValidationError(detail::ossl_error_text("DEK wrap failed"));
    out.resize(out_len);

    WrappedKey wk;
    wk.key_id = key_id;
    wk.ciphertext = std::move(out);
    return wk;
}

inline Dek unwrap_dek(const WrappedKey& wrapped, const PrivateKey& priv,
                      DekPurpose purpose) {
    if (wrapped.wrap_algorithm != kWrapAlgorithm)
        throw FormatError("unsupported wrap algorithm: " + wrapped.wrap_algorithm);
    detail::PkeyCtx ctx(EVP_PKEY_CTX_new(priv.handle(), nullptr));
    if (!ctx || EVP_PKEY_decrypt_init(ctx.get()) != 1 ||
        EVP_PKEY_CTX_set_rsa_padding(ctx.get(), RSA_PKCS1_OAEP_PADDING) != 1 ||
        EVP_PKEY_CTX_set_rsa_oaep_md(ctx.get(), EVP_sha256()) != 1 ||
        EVP_PKEY_CTX_set_rsa_mgf1_md(ctx.get(), EVP_sha256()) != 1)
        throw FatalError(detail::ossl_error_text("OAEP unwrap init failed"));

    std::size_t out_len = 0;
    if (EVP_PKEY_decrypt(ctx.get(), nullptr, &out_len, wrapped.ciphertext.data(),
                         wrapped.ciphertext.size()) != 1) {
        ERR_clear_error();
        throw IntegrityError(IntegrityError::Kind::unwrap, "DEK unwrap failed");
    }
    SecureBuffer out(out_len);
    if (EVP_PKEY_decrypt(ctx.get(), out.data(), &out_len, wrapped.ciphertext.data(),
                         wrapped.ciphertext.size()) != 1) {
        ERR_clear_error();
        // OAEP padding check failed: wrong key or tampered ciphertext.
        throw IntegrityError(IntegrityError::Kind::unwrap, "DEK unwrap failed");
    }
    SecureBuffer trimmed(out.data(), out_len);
    out.wipe();
    return Dek(std::move(trimmed), purpose);
}

// ---------------------------------------------------------------------------
// AEAD (AES-256-GCM)
// ---------------------------------------------------------------------------

// Returns ciphertext || tag.
inline Bytes gcm_seal(ByteView key, ByteView nonce, ByteView aad, ByteView plaintext) {
    if (key.size() != 32) throw ValidationError("GCM key must be 32 bytes");
    if (nonce.size() != kGcmNonceSize) throw ValidationError("GCM nonce must be 12 bytes");
    detail::CipherCtx ctx(EVP_CIPHER_CTX_new());
    if (!ctx ||
        EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr) != 1 ||
        EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN,
                            static_cast<int>(nonce.size()), nullptr) != 1 ||
        EVP_EncryptInit_ex(ctx.get(), nullptr, nullptr, key.data(), nonce.data()) != 1)
        throw FatalError("GCM encrypt init failed");

    int len = 0;
    if (!aad.empty() &&
        EVP_EncryptUpdate(ctx.get(), nullptr, &len, aad.data(),
                          static_cast<int>(aad.size())) != 1)
        throw FatalError("GCM AAD failed");

    Bytes out(plaintext.size() + kGcmTagSize);
    int ct_len = 0;
    if (!plaintext.empty()) {
        if (EVP_EncryptUpdate(ctx.get(), out.data(), &len, plaintext.data(),
                              static_cast<int>(plaintext.size())) != 1)
            throw FatalError("GCM encrypt failed");
        ct_len = len;
    }
    if (EVP_EncryptFinal_ex(ctx.get(), out.data() + ct_len, &len) != 1)
        throw FatalError("GCM finalize failed");
    ct_len += len;
    if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG,
                            static_cast<int>(kGcmTagSize), out.data() + ct_len) != 1)
        throw FatalError("GCM tag extraction failed");
    out.resize(static_cast<std::size_t>(ct_len) + kGcmTagSize);
    return out;
}

// Input is ciphertext || tag; throws IntegrityError on authentication failure.
inline Bytes gcm_open(ByteView key, ByteView nonce, ByteView aad, ByteView sealed,
                      std::optional<std::uint64_t> chunk_index = std::nullopt) {
    if (key.size() != 32) throw ValidationError("GCM key must be 32 bytes");
    if (sealed.size() < kGcmTagSize)
        throw IntegrityError(IntegrityError::Kind::chunk_auth,
                             "sealed chunk shorter than tag", chunk_index);
    std::size_t ct_size = sealed.size() - kGcmTagSize;

    detail::CipherCtx ctx(EVP_CIPHER_CTX_new());
    if (!ctx ||
        EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr) != 1 ||
        EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN,
                            static_cast<int>(nonce.size()), nullptr) != 1 ||
        EVP_DecryptInit_ex(ctx.get(), nullptr, nullptr, key.data(), nonce.data()) != 1)
        throw FatalError("GCM decrypt init failed");

    int len = 0;
    if (!aad.empty() &&
        EVP_DecryptUpdate(ctx.get(), nullptr, &len, aad.data(),
                          static_cast<int>(aad.size())) != 1)
        throw FatalError("GCM AAD failed");

    Bytes out(ct_size);
    int pt_len = 0;
    if (ct_size > 0) {
        if (EVP_DecryptUpdate(ctx.get(), out.data(), &len, sealed.data(),
                              static_cast<int>(ct_size)) != 1)
            throw FatalError("GCM decrypt failed");
        pt_len = len;
    }
    Bytes tag(sealed.begin() + static_cast<std::ptrdiff_t>(ct_size), sealed.end());
    if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG,
                            static_cast<int>(kGcmTagSize), tag.data()) != 1)
        throw FatalError("GCM tag set failed");
    if (EVP_DecryptFinal_ex(ctx.get(), out.data() + pt_len, &len) != 1) {
        ERR_clear_error();
        OPENSSL_cleanse(out.data(), out.size());
        throw IntegrityError(IntegrityError::Kind::chunk_auth,
                             "chunk authentication failed", chunk_index);
    }
    out.resize(static_cast<std::size_t>(pt_len) + static_cast<std::size_t>(len));
    return out;
}

// ---------------------------------------------------------------------------
// Chunked payload sealing
// ---------------------------------------------------------------------------

struct SealedChunk {
    std::array<std::uint8_t, kGcmNonceSize> nonce{};
    Bytes ciphertext;  // ciphertext || tag
};

// Associated data binds each chunk to the manifest and to its position.
inline Bytes chunk_aad(const Digest& manifest_digest, std::uint64_t index) {
    Bytes aad(manifest_digest.bytes.begin(), manifest_digest.bytes.end());
    auto idx = u64_be(index);
    aad.insert(aad.end(), idx.begin(), idx.end());
    return aad;
}

inline SealedChunk seal_chunk(const Dek& dek, const Digest& manifest_digest,
                              std::uint64_t index, ByteView plaintext) {
    if (dek.purpose() != DekPurpose::bundle)
        throw ValidationError("payload sealing requires a bundle DEK");
    SealedChunk chunk;
    Bytes nonce = random_bytes(kGcmNonceSize);
    std::copy(nonce.begin(), nonce.end(), chunk.nonce.begin());
    Bytes aad = chunk_aad(manifest_digest, index);
    chunk.ciphertext = gcm_seal(dek.bytes(), {chunk.nonce.data(), chunk.nonce.size()},
                                {aad.data(), aad.size()}, plaintext);
    return chunk;
}

inline Bytes open_chunk(const Dek& dek, const Digest& manifest_digest,
                        std::uint64_t index, const SealedChunk& chunk) {
    Bytes aad = chunk_aad(manifest_digest, index);
    return gcm_open(dek.bytes(), {chunk.nonce.data(), chunk.nonce.size()},
                    {aad.data(), aad.size()}, {chunk.ciphertext.data(),
                    chunk.ciphertext.size()}, index);
}

inline std::size_t chunk_count_for(std::uint64_t payload_size) {
    if (payload_size == 0) return 1;  // empty payload still carries one sealed chunk
    return static_cast<std::size_t>((payload_size + kChunkSize - 1) / kChunkSize);
}

inline std::vector<SealedChunk> seal_payload(ByteView plaintext, const Dek& dek,
                                             const Digest& manifest_digest) {
    std::vector<SealedChunk> chunks;
    std::size_t n = chunk_count_for(plaintext.size());
    chunks.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t off = i * kChunkSize;
        std::size_t len = std::min(kChunkSize, plaintext.size() - off);
        chunks.push_back(seal_chunk(dek, manifest_digest, i,
                                    plaintext.subspan(off, len)));
    }
    return chunks;
}

inline Bytes open_payload(const std::vector<SealedChunk>& chunks, const Dek& dek,
                          const Digest& manifest_digest) {
    Bytes out;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        Bytes pt = open_chunk(dek, manifest_digest, i, chunks[i]);
        out.insert(out.end(), pt.begin(), pt.end());
        OPENSSL_cleanse(pt.data(), pt.size());
    }
    return out;
}

// ---------------------------------------------------------------------------
// XTS sector encryption
// ---------------------------------------------------------------------------

enum class XtsCipherKind { xts128, xts256 };

inline const char* xts_cipher_name(XtsCipherKind kind) {
    return kind == XtsCipherKind::xts128 ? "AES-XTS-128" : "AES-XTS-256";
}

inline XtsCipherKind xts_kind_from_name(const std::string& name) {
    if (name == "AES-XTS-128") return XtsCipherKind::xts128;
    if (name == "AES-XTS-256") return XtsCipherKind::xts256;
    throw FormatError("unknown XTS cipher: " + name);
}

inline std::size_t xts_key_size(XtsCipherKind kind) {
    return kind == XtsCipherKind::xts128 ? 32 : 64;
}

// Length-preserving tweakable sector cipher. The tweak is the 128-bit
// little-endian encoding of the sector index (IEEE 1619 convention).
// Not thread-safe; use one instance per execution context.
class XtsCipher {
public:
    explicit XtsCipher(const Dek& key)
        : enc_(EVP_CIPHER_CTX_new()), dec_(EVP_CIPHER_CTX_new()) {
        if (key.purpose() != DekPurpose::image)
            throw ValidationError("XTS requires an image DEK");
        const EVP_CIPHER* cipher = nullptr;
        if (key.size() == 32) {
            cipher = EVP_aes_128_xts();
            kind_ = XtsCipherKind::xts128;
        } else if (key.size() == 64) {
            cipher = EVP_aes_256_xts();
            kind_ = XtsCipherKind::xts256;
        } else {
            throw ValidationError("XTS key must be 32 or 64 bytes");
        }
        std::array<std::uint8_t, 16> zero_iv{};
        if (!enc_ || !dec_ ||
            EVP_EncryptInit_ex(enc_.get(), cipher, nullptr, key.bytes().data(),
                               zero_iv.data()) != 1 ||
            EVP_DecryptInit_ex(dec_.get(), cipher, nullptr, key.bytes().data(),
                               zero_iv.data()) != 1)
            throw FatalError(detail::ossl_error_text("XTS init failed"));
    }

    XtsCipherKind kind() const { return kind_; }

    Bytes encrypt(std::uint64_t sector_index, ByteView plaintext) {
        return transform(sector_index, plaintext, true);
    }

    Bytes decrypt(std::uint64_t sector_index, ByteView ciphertext) {
        return transform(sector_index, ciphertext, false);
    }

    // data.size() must be >= one AES block; arbitrary larger lengths are
    // handled with ciphertext stealing. Sector-sized callers pass 4096.
    Bytes transform(std::uint64_t sector_index, ByteView data, bool encrypting) {
        Bytes out(data.size());
        transform_to(sector_index, data, out.data(), encrypting);
        return out;
    }

    // Zero-copy variant: writes data.size() bytes at `out`.
    void transform_to(std::uint64_t sector_index, ByteView data, std::uint8_t* out,
                      bool encrypting) {
        if (data.size() < 16)
            throw ValidationError("XTS data unit must be at least 16 bytes");
        std::array<std::uint8_t, 16> tweak{};
        for (int i = 0; i < 8; ++i)
            tweak[static_cast<std::size_t>(i)] =
                static_cast<std::uint8_t>(sector_index >> (8 * i));

        EVP_CIPHER_CTX* ctx = encrypting ? enc_.get() : dec_.get();
        if (EVP_CipherInit_ex(ctx, nullptr, nullptr, nullptr, tweak.data(), -1) != 1)
            throw FatalError("XTS tweak init failed");
        int len = 0;
        if (EVP_CipherUpdate(ctx, out, &len, data.data(),
                             static_cast<int>(data.size())) != 1)
            throw FatalError(detail::ossl_error_text("XTS transform failed"));
        int fin = 0;
        if (EVP_CipherFinal_ex(ctx, out + len, &fin) != 1)
            throw FatalError("XTS finalize failed");
        if (static_cast<std::size_t>(len + fin) != data.size())
            throw FatalError("XTS transform length mismatch");
    }

private:
    detail::CipherCtx enc_;
    detail::CipherCtx dec_;
    XtsCipherKind kind_ = XtsCipherKind::xts128;
};

}  // namespace scw
