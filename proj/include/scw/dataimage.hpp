// Copyright 2026 The scw Authors
// SPDX-License-Identifier: Apache-2.0
//
// Sector-encrypted block image for bulk datasets. The file is ciphertext by
// construction: a cleartext header carries the wrapped XTS key, everything
// after it is AES-XTS sectors tweaked by sector index.
//
// Header layout (all integers big-endian):
//   magic "SCDI" | version u16 | cipher u8 (1=XTS-128, 2=XTS-256)
//   | sector_size u32 | sector_count u64
//   | key_id (u16 len + bytes) | wrap_algorithm (u16 len + bytes)
//   | wrapped key (u32 len + bytes) | SHA-256 over all preceding bytes

#pragma once

#include <optional>
#include <set>
#include <string>

#include "scw/crypto.hpp"
#include "scw/errors.hpp"
#include "scw/io.hpp"

namespace scw {

constexpr const char* kImageMagic = "SCDI";
constexpr std::uint16_t kImageVersion = 1;

struct ImageHeader {
    XtsCipherKind cipher = XtsCipherKind::xts128;
    std::uint32_t sector_size = kSectorSize;
    std::uint64_t sector_count = 0;
    WrappedKey wrapped_key;

    Bytes encode_without_digest() const {
        Bytes out;
        out.insert(out.end(), kImageMagic, kImageMagic + 4);
        put_u16_be(out, kImageVersion);
        out.push_back(cipher == XtsCipherKind::xts128 ? 1 : 2);
        put_u32_be(out, sector_size);
        put_u64_be(out, sector_count);
        put_u16_be(out, static_cast<std::uint16_t>(wrapped_key.key_id.size()));
        out.insert(out.end(), wrapped_key.key_id.begin(), wrapped_key.key_id.end());
        put_u16_be(out, static_cast<std::uint16_t>(wrapped_key.wrap_algorithm.size()));
        out.insert(out.end(), wrapped_key.wrap_algorithm.begin(),
                   wrapped_key.wrap_algorithm.end());
        put_u32_be(out, static_cast<std::uint32_t>(wrapped_key.ciphertext.size()));
        out.insert(out.end(), wrapped_key.ciphertext.begin(),
                   wrapped_key.ciphertext.end());
        return out;
    }

    Bytes encode() const {
        Bytes out = encode_without_digest();
        Digest d = digest(out);
        out.insert(out.end(), d.bytes.begin(), d.bytes.end());
        return out;
    }

    static ImageHeader decode(ByteView data, std::size_t* header_size) {
        std::size_t pos = 0;
        auto need = [&](std::size_t n) {
            if (pos + n > data.size()) throw FormatError("truncated image header");
        };
        need(4);
        if (std::memcmp(data.data(), kImageMagic, 4) != 0)
            throw FormatError("not an scw data image");
        pos = 4;
        need(2);
        std::uint16_t version = get_u16_be(data.data() + pos);
        pos += 2;
        if (version != kImageVersion)
            throw FormatError("unsupported image version");
        need(1);
        std::uint8_t cipher_code = data[pos++];
        ImageHeader h;
        if (cipher_code == 1) h.cipher = XtsCipherKind::xts128;
        else if (cipher_code == 2) h.cipher = XtsCipherKind::xts256;
        else throw FormatError("unknown image cipher code");
        need(4);
        h.sector_size = get_u32_be(data.data() + pos);
        pos += 4;
        need(8);
        h.sector_count = get_u64_be(data.data() + pos);
        pos += 8;
        auto read_str = [&](std::size_t len_bytes) {
            need(len_bytes);
            std::size_t len = len_bytes == 2 ? get_u16_be(data.data() + pos)
                                             : get_u32_be(data.data() + pos);
            pos += len_bytes;
            need(len);
            std::string s(reinterpret_cast<const char*>(data.data() + pos), len);
            pos += len;
            return s;
        };
        h.wrapped_key.key_id = read_str(2);
        h.wrapped_key.wrap_algorithm = read_str(2);
        need(4);
        std::uint32_t ct_len = get_u32_be(data.data() + pos);
        pos += 4;
        need(ct_len);
        h.wrapped_key.ciphertext.assign(
            data.begin() + static_cast<std::ptrdiff_t>(pos),
            data.begin() + static_cast<std::ptrdiff_t>(pos + ct_len));
        pos += ct_len;

        // Digest covers every preceding header byte and gates key use.
        need(32);
        Digest expected = digest(data.first(pos));
        if (std::memcmp(expected.bytes.data(), data.data() + pos, 32) != 0)
            throw FormatError("image header digest mismatch");
        pos += 32;
        if (h.sector_size != kSectorSize)
            throw FormatError("unsupported sector size");
        if (h.sector_count < 1)
            throw FormatError("image must have at least one sector");
        if (header_size != nullptr) *header_size = pos;
        return h;
    }
};

// Raw sector store shared by data images and the I/O benchmark: an optional
// XTS layer in front of positioned writes, so encrypted and plain targets
// run the identical write path.
class SectorFile {
public:
    SectorFile(io::FileHandle file, std::uint64_t base_offset,
               std::uint64_t sector_count, std::optional<XtsCipher> cipher)
        : file_(std::move(file)), base_(base_offset), count_(sector_count),
          cipher_(std::move(cipher)) {}

    std::uint64_t sector_count() const { return count_; }

    void write(std::uint64_t first, ByteView data, bool sync = false) {
        if (data.size() % kSectorSize != 0)
            throw ValidationError("write length must be a multiple of the sector size");
        std::uint64_t n = data.size() / kSectorSize;
        check_range(first, n);
        Bytes disk(data.size());
        if (cipher_) {
            for (std::uint64_t i = 0; i < n; ++i)
                cipher_->transform_to(first + i,
                                      data.subspan(i * kSectorSize, kSectorSize),
                                      disk.data() + i * kSectorSize, true);
        } else {
            std::memcpy(disk.data(), data.data(), data.size());
        }
        file_.pwrite_at(base_ + first * kSectorSize, disk);
        if (sync) file_.sync_data();
    }

    Bytes read(std::uint64_t first, std::uint64_t n) {
        check_range(first, n);
        Bytes disk = file_.pread_at(base_ + first * kSectorSize, n * kSectorSize);
        if (!cipher_) return disk;
        Bytes out(disk.size());
        for (std::uint64_t i = 0; i < n; ++i)
            cipher_->transform_to(first + i,
                                  ByteView(disk).subspan(i * kSectorSize, kSectorSize),
                                  out.data() + i * kSectorSize, false);
        return out;
    }

    void sync() { file_.sync_data(); }

private:
    void check_range(std::uint64_t first, std::uint64_t n) const {
        if (first > count_ || n > count_ - first)
            throw RangeError("sector range [" + std::to_string(first) + ", +" +
                             std::to_string(n) + ") outside image of " +
                             std::to_string(count_) + " sectors");
    }

    io::FileHandle file_;
    std::uint64_t base_;
    std::uint64_t count_;
    std::optional<XtsCipher> cipher_;
};

class ImageHandle {
public:
    ImageHandle(ImageHeader header, SectorFile store)
        : header_(std::move(header)), store_(std::move(store)) {}

    const ImageHeader& header() const { return header_; }
    std::uint64_t sector_count() const { return header_.sector_count; }

    Bytes read_sectors(std::uint64_t first, std::uint64_t count) {
        ensure_open();
        return store_->read(first, count);
    }

    void write_sectors(std::uint64_t first, ByteView data) {
        ensure_open();
        store_->write(first, data);
        std::uint64_t n = data.size() / kSectorSize;
        for (std::uint64_t i = 0; i < n; ++i) dirty_.insert(first + i);
    }

    const std::set<std::uint64_t>& dirty_sectors() const { return dirty_; }

    // Drops the unwrapped key; the handle is unusable afterwards.
    void close() { store_.reset(); }
    bool closed() const { return !store_.has_value(); }

private:
    void ensure_open() const {
        if (!store_) throw UseAfterCloseError("image handle is closed");
    }

    ImageHeader header_;
    std::optional<SectorFile> store_;
    std::set<std::uint64_t> dirty_;
};

// Creates an image whose sectors are encryptions of `content` (zero-padded);
// an empty content view yields an all-zeros image. The generation-time DEK
// lives only inside this call, so initial content never touches disk in
// cleartext.
inline void create_image(const std::string& path, std::uint64_t sector_count,
                         XtsCipherKind cipher, const PublicKey& pub,
                         const std::string& key_id, ByteView content = {}) {
    if (sector_count < 1)
        throw ValidationError("image needs at least one sector");
    if (content.size() > sector_count * kSectorSize)
        throw ValidationError("initial content exceeds image capacity");
    Dek dek = Dek::generate(DekPurpose::image, xts_key_size(cipher));

    ImageHeader header;
    header.cipher = cipher;
    header.sector_count = sector_count;
    header.wrapped_key = wrap_dek(dek, pub, key_id);
    Bytes encoded = header.encode();

    io::FileHandle file = io::FileHandle::open_write(path);
    file.write(encoded);

    XtsCipher xts(dek);
    Bytes sector(kSectorSize, 0);
    constexpr std::uint64_t kBatch = 64;
    Bytes batch;
    for (std::uint64_t first = 0; first < sector_count; first += kBatch) {
        std::uint64_t n = std::min(kBatch, sector_count - first);
        batch.clear();
        for (std::uint64_t i = 0; i < n; ++i) {
            std::uint64_t idx = first + i;
            std::fill(sector.begin(), sector.end(), 0);
            std::uint64_t off = idx * kSectorSize;
            if (off < content.size()) {
                std::size_t len = std::min<std::size_t>(kSectorSize,
                                                        content.size() - off);
                std::memcpy(sector.data(), content.data() + off, len);
            }
            Bytes ct = xts.encrypt(idx, sector);
            batch.insert(batch.end(), ct.begin(), ct.end());
        }
        file.write(batch);
    }
    OPENSSL_cleanse(sector.data(), sector.size());
    dek.destroy();
}

inline ImageHandle open_image_with_dek(const std::string& path, const Dek& dek) {
    Bytes raw = io::read_file(path);
    std::size_t header_size = 0;
    ImageHeader header = ImageHeader::decode(raw, &header_size);
    std::uint64_t expected = header_size +
                             header.sector_count * static_cast<std::uint64_t>(kSectorSize);
    if (raw.size() != expected)
        throw FormatError("image file size does not match header geometry");
    if (dek.size() != xts_key_size(header.cipher))
        throw IntegrityError(IntegrityError::Kind::unwrap,
                             "unwrapped key length does not match image cipher");
    SectorFile store(io::FileHandle::open_rw(path), header_size,
                     header.sector_count, XtsCipher(dek));
    return ImageHandle(std::move(header), std::move(store));
}

inline ImageHandle open_image(const std::string& path, const PrivateKey& priv) {
    Bytes raw = io::read_file(path);
    std::size_t header_size = 0;
    ImageHeader header = ImageHeader::decode(raw, &header_size);
    Dek dek = unwrap_dek(header.wrapped_key, priv, DekPurpose::image);
    ImageHandle handle = open_image_with_dek(path, dek);
    dek.destroy();
    return handle;
}

}  // namespace scw
