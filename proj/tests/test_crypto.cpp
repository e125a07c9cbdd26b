// Copyright 2026 The scw Authors
// SPDX-License-Identifier: Apache-2.0

#include "scw/crypto.hpp"

#include <random>

#include "doctest.h"
#include "testutil.hpp"

using namespace scw;

namespace {

Dek fixed_image_dek(XtsCipherKind kind) {
    // Keys used by the frozen cross-implementation vectors below.
    std::string hex128 = "02f6f668f11088f95ddec539a9bc23418c7c013055ef8c5dec6fd3c779edf56a";
    std::string hex256 =
        "e6b8f9bf4d01944668ce0a1eddf0eafff2dbea17b539ff3e5948e4e2146adbf5"
        "25349e0945ae3bf5f25b0337de1a2ab86017303a7da135ffb92e17ae68e0639b";
    Bytes raw = from_hex(kind == XtsCipherKind::xts128 ? hex128 : hex256);
    return Dek(SecureBuffer(std::move(raw)), DekPurpose::image);
}

Bytes patterned_sector() {
    Bytes s(4096);
    for (std::size_t i = 0; i < s.size(); ++i)
        s[i] = static_cast<std::uint8_t>((i * 7 + 3) & 0xff);
    return s;
}

}  // namespace

TEST_CASE("sha256 known answers and determinism") {
    CHECK(digest({}).hex() ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    Bytes data = {'a', 'b', 'c'};
    CHECK(digest(data) == digest(data));
    Bytes data2 = data;
    data2[0] ^= 0x01;
    CHECK(digest(data) != digest(data2));
}

TEST_CASE("hmac-sha256 rfc4231 case 1") {
    Bytes key(20, 0x0b);
    std::string msg = "Hi There";
    CHECK(to_hex(hmac_sha256(key, as_bytes(msg))) ==
          "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7");
}

TEST_CASE("hkdf expand produces stable keyed material") {
    Bytes secret = from_hex("0b0b0b0b0b0b0b0b0b0b0b0b0b0b0b0b");
    Bytes salt = from_hex("000102030405060708090a0b0c");
    Bytes a = hkdf_sha256(secret, salt, "ctx", 42);
    Bytes b = hkdf_sha256(secret, salt, "ctx", 42);
    CHECK(a == b);
    CHECK(a.size() == 42);
    CHECK(hkdf_sha256(secret, salt, "other", 42) != a);
}

TEST_CASE("gcm seal/open cross-implementation vector") {
    Bytes key = from_hex("24e4cea98d210f3856390583bd93c778826d53d54d005ae6ded19bee89dc2a34");
    Bytes nonce = from_hex("000102030405060708090a0b");
    std::string aad = "scw-gcm-kat-aad";
    std::string pt = "The quick brown fox jumps over the lazy dog";
    Bytes sealed = gcm_seal(key, nonce, as_bytes(aad), as_bytes(pt));
    CHECK(to_hex(sealed) ==
          "42af85bac36bd151e29927094094d630747ab68faf757b4d2f508ebe66d4541a"
          "dcce36fea8e7f01bf2118fdb748824561ef201c2fac0fde6ad1a46");
    Bytes opened = gcm_open(key, nonce, as_bytes(aad), sealed);
    CHECK(to_string(opened) == pt);
}

TEST_CASE("keypair generation uniqueness and round-trip") {
    KeyPair a = generate_keypair();
    KeyPair b = generate_keypair();
    CHECK(a.key_id != b.key_id);
    CHECK(a.public_part.to_pem() != b.public_part.to_pem());

    Dek dek = Dek::generate(DekPurpose::bundle);
    WrappedKey wrapped = wrap_dek(dek, a.public_part, a.key_id);
    CHECK(wrapped.ciphertext.size() == kRsaCiphertextSize);
    Dek back = unwrap_dek(wrapped, a.private_part, DekPurpose::bundle);
    CHECK(back == dek);

    CHECK_THROWS_AS(unwrap_dek(wrapped, b.private_part, DekPurpose::bundle),
                    IntegrityError);
}

TEST_CASE("pem round-trips preserve keys") {
    KeyPair kp = generate_keypair();
    PublicKey pub = PublicKey::from_pem(kp.public_part.to_pem());
    CHECK(pub.to_pem() == kp.public_part.to_pem());
    PrivateKey priv = PrivateKey::from_pem(kp.private_part.to_pem());
    Dek dek = Dek::generate(DekPurpose::bundle);
    Dek back = unwrap_dek(wrap_dek(dek, pub, kp.key_id), priv, DekPurpose::bundle);
    CHECK(back == dek);
    CHECK_THROWS_AS(PublicKey::from_pem("not a pem"), FormatError);
}

TEST_CASE("wrap is probabilistic and handles 64-byte keys") {
    KeyPair kp = generate_keypair();
    Dek dek = Dek::generate(DekPurpose::image, 64);
    WrappedKey w1 = wrap_dek(dek, kp.public_part, kp.key_id);
    WrappedKey w2 = wrap_dek(dek, kp.public_part, kp.key_id);
    CHECK(w1.ciphertext != w2.ciphertext);
    CHECK(unwrap_dek(w1, kp.private_part, DekPurpose::image) == dek);
    CHECK(unwrap_dek(w2, kp.private_part, DekPurpose::image) == dek);
}

TEST_CASE("every byte of a wrapped key is tamper-fatal") {
    KeyPair kp = generate_keypair();
    Dek dek = Dek::generate(DekPurpose::bundle);
    WrappedKey wrapped = wrap_dek(dek, kp.public_part, kp.key_id);
    for (std::size_t i = 0; i < wrapped.ciphertext.size(); ++i) {
        WrappedKey evil = wrapped;
        evil.ciphertext[i] ^= 0x01;
        CHECK_THROWS_AS(unwrap_dek(evil, kp.private_part, DekPurpose::bundle),
                        IntegrityError);
    }
}

TEST_CASE("dek length validation and zeroization") {
    CHECK_THROWS_AS(Dek::generate(DekPurpose::bundle, 64), ValidationError);
    CHECK_THROWS_AS(Dek::generate(DekPurpose::image, 48), ValidationError);
    Dek dek = Dek::generate(DekPurpose::bundle);
    CHECK_FALSE(dek.destroyed());
    dek.destroy();
    CHECK(dek.destroyed());
    CHECK(dek.bytes().empty());
}

TEST_CASE("seal_payload chunk arithmetic") {
    Dek dek = Dek::generate(DekPurpose::bundle);
    Digest md = digest(as_bytes(std::string("manifest")));

    SUBCASE("empty payload yields one authenticated empty chunk") {
        auto chunks = seal_payload({}, dek, md);
        REQUIRE(chunks.size() == 1);
        CHECK(chunks[0].ciphertext.size() == kGcmTagSize);
        Bytes out = open_payload(chunks, dek, md);
        CHECK(out.empty());
    }

    SUBCASE("2.5 MiB payload yields 1M + 1M + 0.5M chunks") {
        std::mt19937_64 rng(7);
        Bytes payload = scwtest::det_bytes(rng, 5 * kChunkSize / 2);
        auto chunks = seal_payload(payload, dek, md);
        REQUIRE(chunks.size() == 3);
        CHECK(chunks[0].ciphertext.size() == kChunkSize + kGcmTagSize);
        CHECK(chunks[1].ciphertext.size() == kChunkSize + kGcmTagSize);
        CHECK(chunks[2].ciphertext.size() == kChunkSize / 2 + kGcmTagSize);
        CHECK(open_payload(chunks, dek, md) == payload);
    }
}

TEST_CASE("chunk order is bound by associated data") {
    Dek dek = Dek::generate(DekPurpose::bundle);
    Digest md = digest(as_bytes(std::string("m")));
    std::mt19937_64 rng(11);
    Bytes payload = scwtest::det_bytes(rng, kChunkSize + 512);
    auto chunks = seal_payload(payload, dek, md);
    REQUIRE(chunks.size() == 2);
    std::swap(chunks[0], chunks[1]);
    try {
        open_payload(chunks, dek, md);
        FAIL("swapped chunks must not authenticate");
    } catch (const IntegrityError& e) {
        CHECK(e.kind() == IntegrityError::Kind::chunk_auth);
        CHECK(e.chunk_index() == 0);  // first swapped position
    }
}

TEST_CASE("open_payload failure modes carry the chunk index") {
    Dek dek = Dek::generate(DekPurpose::bundle);
    Digest md = digest(as_bytes(std::string("m")));
    std::mt19937_64 rng(13);
    Bytes payload = scwtest::det_bytes(rng, 2 * kChunkSize);
    auto chunks = seal_payload(payload, dek, md);

    SUBCASE("flipped ciphertext byte in chunk 1") {
        chunks[1].ciphertext[100] ^= 0x01;
        try {
            open_payload(chunks, dek, md);
            FAIL("tampered chunk must not authenticate");
        } catch (const IntegrityError& e) {
            CHECK(e.chunk_index() == 1);
        }
    }

    SUBCASE("wrong dek fails at chunk 0") {
        Dek other = Dek::generate(DekPurpose::bundle);
        try {
            open_payload(chunks, other, md);
            FAIL("wrong key must not authenticate");
        } catch (const IntegrityError& e) {
            CHECK(e.chunk_index() == 0);
        }
    }

    SUBCASE("wrong manifest digest fails at chunk 0") {
        Digest other = digest(as_bytes(std::string("other")));
        try {
            open_payload(chunks, dek, other);
            FAIL("AAD mismatch must not authenticate");
        } catch (const IntegrityError& e) {
            CHECK(e.chunk_index() == 0);
        }
    }
}

TEST_CASE("property: payload round-trip identity up to 8 MiB") {
    Dek dek = Dek::generate(DekPurpose::bundle);
    Digest md = digest(as_bytes(std::string("prop")));
    std::mt19937_64 rng(101);
    // Boundary-heavy size sample.
    std::vector<std::size_t> sizes = {1,          15,           kChunkSize - 1,
                                      kChunkSize, kChunkSize + 1, 3 * kChunkSize + 77,
                                      8 * kChunkSize};
    for (std::size_t n : sizes) {
        Bytes payload = scwtest::det_bytes(rng, n);
        auto chunks = seal_payload(payload, dek, md);
        CHECK(chunks.size() == chunk_count_for(n));
        CHECK(open_payload(chunks, dek, md) == payload);
    }
}

TEST_CASE("property: nonce uniqueness within one seal") {
    Dek dek = Dek::generate(DekPurpose::bundle);
    Digest md = digest(as_bytes(std::string("n")));
    std::mt19937_64 rng(17);
    Bytes payload = scwtest::det_bytes(rng, 6 * kChunkSize);
    auto chunks = seal_payload(payload, dek, md);
    for (std::size_t i = 0; i < chunks.size(); ++i)
        for (std::size_t j = i + 1; j < chunks.size(); ++j)
            CHECK(chunks[i].nonce != chunks[j].nonce);
}

TEST_CASE("property: single byte flips anywhere in sealed chunks are fatal") {
    Dek dek = Dek::generate(DekPurpose::bundle);
    Digest md = digest(as_bytes(std::string("t")));
    std::mt19937_64 rng(23);
    Bytes payload = scwtest::det_bytes(rng, kChunkSize / 4);
    auto chunks = seal_payload(payload, dek, md);
    REQUIRE(chunks.size() == 1);
    // Sample positions across nonce and ciphertext||tag.
    std::uniform_int_distribution<std::size_t> pos_dist(
        0, chunks[0].ciphertext.size() - 1);
    for (int trial = 0; trial < 64; ++trial) {
        auto tampered = chunks;
        if (trial < 8) {
            tampered[0].nonce[static_cast<std::size_t>(trial) % kGcmNonceSize] ^= 0x80;
        } else {
            tampered[0].ciphertext[pos_dist(rng)] ^= 0x01;
        }
        CHECK_THROWS_AS(open_payload(tampered, dek, md), IntegrityError);
    }
}

TEST_CASE("xts round-trip and tweak sensitivity") {
    Dek key = Dek::generate(DekPurpose::image, 32);
    XtsCipher cipher(key);

    Bytes zeros(kSectorSize, 0);
    Bytes ct0 = cipher.encrypt(0, zeros);
    CHECK(ct0.size() == kSectorSize);
    CHECK(cipher.decrypt(0, ct0) == zeros);

    Bytes ct1 = cipher.encrypt(1, zeros);
    CHECK(ct0 != ct1);  // tweak dependence

    CHECK_THROWS_AS(cipher.encrypt(0, Bytes(8)), ValidationError);
}

TEST_CASE("xts known-answer vectors (IEEE 1619 <e,pi> keys, 512-byte units)") {
    Bytes seq(512);
    for (std::size_t i = 0; i < seq.size(); ++i)
        seq[i] = static_cast<std::uint8_t>(i & 0xff);

    SUBCASE("XTS-AES-128, data unit 0") {
        Bytes key = from_hex("27182818284590452353602874713526"
                             "31415926535897932384626433832795");
        XtsCipher cipher(Dek(SecureBuffer(std::move(key)), DekPurpose::image));
        Bytes ct = cipher.encrypt(0, seq);
        CHECK(to_hex(ct).substr(0, 32) == "27a7479befa1d476489f308cd4cfa6e2");
        CHECK(to_hex(ct) ==
              "27a7479befa1d476489f308cd4cfa6e2a96e4bbe3208ff25287dd3819616e89c"
              "c78cf7f5e543445f8333d8fa7f56000005279fa5d8b5e4ad40e736ddb4d35412"
              "328063fd2aab53e5ea1e0a9f332500a5df9487d07a5c92cc512c8866c7e860ce"
              "93fdf166a24912b422976146ae20ce846bb7dc9ba94a767aaef20c0d61ad0265"
              "5ea92dc4c4e41a8952c651d33174be51a10c421110e6d81588ede82103a252d8"
              "a750e8768defffed9122810aaeb99f9172af82b604dc4b8e51bcb08235a6f434"
              "1332e4ca60482a4ba1a03b3e65008fc5da76b70bf1690db4eae29c5f1badd03c"
              "5ccf2a55d705ddcd86d449511ceb7ec30bf12b1fa35b913f9f747a8afd1b130e"
              "94bff94effd01a91735ca1726acd0b197c4e5b03393697e126826fb6bbde8ecc"
              "1e08298516e2c9ed03ff3c1b7860f6de76d4cecd94c8119855ef5297ca67e9f3"
              "e7ff72b1e99785ca0a7e7720c5b36dc6d72cac9574c8cbbc2f801e23e56fd344"
              "b07f22154beba0f08ce8891e643ed995c94d9a69c9f1b5f499027a78572aeebd"
              "74d20cc39881c213ee770b1010e4bea718846977ae119f7a023ab58cca0ad752"
              "afe656bb3c17256a9f6e9bf19fdd5a38fc82bbe872c5539edb609ef4f79c203e"
              "bb140f2e583cb2ad15b4aa5b655016a8449277dbd477ef2c8d6c017db738b18d"
              "eb4a427d1923ce3ff262735779a418f20a282df920147beabe421ee5319d0568");
        CHECK(cipher.decrypt(0, ct) == seq);
    }

    SUBCASE("XTS-AES-128, data unit 1") {
        Bytes key = from_hex("27182818284590452353602874713526"
                             "31415926535897932384626433832795");
        XtsCipher cipher(Dek(SecureBuffer(std::move(key)), DekPurpose::image));
        Bytes ct = cipher.encrypt(1, seq);
        CHECK(to_hex(ct).substr(0, 32) == "bbf9d6a74a7465fee20f42adf9a623fc");
        CHECK(cipher.decrypt(1, ct) == seq);
    }

    SUBCASE("XTS-AES-256, data unit 0xff") {
        Bytes key = from_hex(
            "2718281828459045235360287471352662497757247093699959574966967627"
            "3141592653589793238462643383279502884197169399375105820974944592");
        XtsCipher cipher(Dek(SecureBuffer(std::move(key)), DekPurpose::image));
        Bytes ct = cipher.encrypt(0xff, seq);
        CHECK(to_hex(ct).substr(0, 32) == "1c3b3a102f770386e4836c99e370cf9b");
        CHECK(cipher.decrypt(0xff, ct) == seq);
    }
}

TEST_CASE("xts cross-implementation vectors for 4096-byte sectors") {
    // Expected digests computed with an independent XTS implementation
    // (PyCA cryptography) over the patterned sector below.
    Bytes sector = patterned_sector();

    struct Row {
        XtsCipherKind kind;
        std::uint64_t index;
        const char* sha256_of_ct;
    };
    const Row rows[] = {
        {XtsCipherKind::xts128, 0,
         "b0035beb317a494cee90c41f75d56243f064f235b6b76f9f0f591fdb7b95c90d"},
        {XtsCipherKind::xts128, 1,
         "6f415dff2282d42b78355279a6d75bc3b1e524b12744ae7f25c1da8fb60be21a"},
        {XtsCipherKind::xts128, 1ull << 32,
         "a7be7073d345b6ad425c9e7f909d4c60bc0d610ff88c8ca4e25867509438c9c1"},
        {XtsCipherKind::xts128, 1ull << 63,
         "a7d7bda8d5f734adea761a6237a4cdc956ac8a5d1a05efe8144b8e99051cd3d1"},
        {XtsCipherKind::xts256, 0,
         "43386260808abc1ee0d643aa2786e43838a6d3ffb0bd793f81d5150bd7e0f9a0"},
        {XtsCipherKind::xts256, 1,
         "5c44f24ea794796102a2dcdf3e62199616aae3bef6cbbf862216938f3fb47178"},
        {XtsCipherKind::xts256, 1ull << 32,
         "adf23c6c16edab21f160c04e8c3d0f55da75bbe424e5690a03bb1af8b97ff774"},
        {XtsCipherKind::xts256, 1ull << 63,
         "04030441b0e106eaadd37194e3051e238baa37fe9e26a44989a80cd0dda18647"},
    };
    for (const Row& row : rows) {
        Dek key = fixed_image_dek(row.kind);
        XtsCipher cipher(key);
        Bytes ct = cipher.encrypt(row.index, sector);
        CHECK(digest(ct).hex() == row.sha256_of_ct);
        CHECK(cipher.decrypt(row.index, ct) == sector);
    }
}

TEST_CASE("property: xts random sector round-trips") {
    std::mt19937_64 rng(31);
    for (XtsCipherKind kind : {XtsCipherKind::xts128, XtsCipherKind::xts256}) {
        Dek key = Dek::generate(DekPurpose::image, xts_key_size(kind));
        XtsCipher cipher(key);
        for (int i = 0; i < 50; ++i) {
            Bytes sector = scwtest::det_bytes(rng, kSectorSize);
            std::uint64_t index = rng();
            Bytes ct = cipher.encrypt(index, sector);
            CHECK(ct.size() == sector.size());
            CHECK(cipher.decrypt(index, ct) == sector);
        }
    }
}
