// Copyright 2026 The scw Authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic directory archive: entries sorted by path, metadata reduced
// to an executable bit, no timestamps. Identical trees archive to identical
// bytes on every platform, so payload digests are reproducible.

#pragma once

#include <sys/stat.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "scw/bytes.hpp"
#include "scw/errors.hpp"
#include "scw/io.hpp"

namespace scw {

namespace fs = std::filesystem;

constexpr const char* kArchiveMagic = "SCA1";

struct MemoryFile {
    Bytes data;
    bool executable = false;

    bool operator==(const MemoryFile& o) const {
        return data == o.data && executable == o.executable;
    }
};

// In-memory directory tree; the only form a decrypted workflow ever takes
// on a worker node.
struct MemoryTree {
    std::map<std::string, MemoryFile> files;  // path -> content
    std::set<std::string> dirs;               // explicit directories

    bool operator==(const MemoryTree& o) const {
        return files == o.files && dirs == o.dirs;
    }

    void wipe() {
        for (auto& [path, file] : files) {
            if (!file.data.empty())
                OPENSSL_cleanse(file.data.data(), file.data.size());
        }
        files.clear();
        dirs.clear();
    }

    // Union of two trees; duplicate paths must agree.
    void merge(const MemoryTree& other) {
        for (const auto& d : other.dirs) dirs.insert(d);
        for (const auto& [path, file] : other.files) {
            auto [it, inserted] = files.emplace(path, file);
            if (!inserted && !(it->second == file))
                throw ConflictError("conflicting content for " + path);
        }
    }
};

namespace archive_detail {

inline void check_path(const std::string& path) {
    if (path.empty() || path.front() == '/' || path.back() == '/')
        throw FormatError("invalid archive path: '" + path + "'");
    if (path.find('\\') != std::string::npos)
        throw FormatError("backslash in archive path: " + path);
    std::size_t pos = 0;
    while (pos != std::string::npos) {
        std::size_t next = path.find('/', pos);
        std::string part = path.substr(pos, next == std::string::npos
                                                ? std::string::npos
                                                : next - pos);
        if (part.empty() || part == "." || part == "..")
            throw FormatError("invalid archive path component in: " + path);
        pos = next == std::string::npos ? next : next + 1;
    }
}

constexpr std::uint8_t kEntryFile = 0;
constexpr std::uint8_t kEntryDir = 1;

}  // namespace archive_detail

inline Bytes pack_tree(const MemoryTree& tree) {
    // Entries emitted in byte-lexicographic path order; dirs and files share
    // one ordered namespace.
    std::map<std::string, const MemoryFile*> entries;
    for (const auto& d : tree.dirs) {
        archive_detail::check_path(d);
        entries.emplace(d, nullptr);
    }
    for (const auto& [path, file] : tree.files) {
        archive_detail::check_path(path);
        auto [it, inserted] = entries.emplace(path, &file);
        if (!inserted) throw FormatError("path is both file and dir: " + path);
    }

    Bytes out;
    out.insert(out.end(), kArchiveMagic, kArchiveMagic + 4);
    for (const auto& [path, file] : entries) {
        out.push_back(file != nullptr ? archive_detail::kEntryFile
                                      : archive_detail::kEntryDir);
        if (path.size() > UINT16_MAX) throw FormatError("path too long: " + path);
        put_u16_be(out, static_cast<std::uint16_t>(path.size()));
        out.insert(out.end(), path.begin(), path.end());
        if (file != nullptr) {
            out.push_back(file->executable ? 1 : 0);
            put_u64_be(out, file->data.size());
            out.insert(out.end(), file->data.begin(), file->data.end());
        }
    }
    return out;
}

inline MemoryTree unpack_tree(ByteView data) {
    if (data.size() < 4 || std::memcmp(data.data(), kArchiveMagic, 4) != 0)
        throw FormatError("not an scw archive stream");
    MemoryTree tree;
    std::size_t pos = 4;
    std::string prev_path;
    auto need = [&](std::size_t n) {
        if (pos + n > data.size()) throw FormatError("truncated archive stream");
    };
    while (pos < data.size()) {
        need(3);
        std::uint8_t type = data[pos++];
        std::uint16_t path_len = get_u16_be(data.data() + pos);
        pos += 2;
        need(path_len);
        std::string path(reinterpret_cast<const char*>(data.data() + pos), path_len);
        pos += path_len;
        archive_detail::check_path(path);
        if (!prev_path.empty() && !(prev_path < path))
            throw FormatError("archive entries out of order at " + path);
        prev_path = path;

        if (type == archive_detail::kEntryDir) {
            tree.dirs.insert(path);
        } else if (type == archive_detail::kEntryFile) {
            need(9);
            bool exec = data[pos++] != 0;
            std::uint64_t size = get_u64_be(data.data() + pos);
            pos += 8;
            need(static_cast<std::size_t>(size));
            MemoryFile f;
            f.executable = exec;
            f.data.assign(data.begin() + static_cast<std::ptrdiff_t>(pos),
                          data.begin() + static_cast<std::ptrdiff_t>(pos + size));
            pos += static_cast<std::size_t>(size);
            tree.files.emplace(std::move(path), std::move(f));
        } else {
            throw FormatError("unknown archive entry type");
        }
    }
    return tree;
}

inline MemoryTree load_tree_from_dir(const std::string& root) {
    fs::path base(root);
    std::error_code ec;
    if (!fs::is_directory(base, ec))
        throw IoError("not a readable directory: " + root);

    MemoryTree tree;
    for (auto it = fs::recursive_directory_iterator(base, ec);
         it != fs::recursive_directory_iterator(); it.increment(ec)) {
        if (ec) throw IoError("cannot walk " + root + ": " + ec.message());
        const fs::directory_entry& entry = *it;
        std::string rel = fs::relative(entry.path(), base).generic_string();
        if (entry.is_directory()) {
            tree.dirs.insert(rel);
        } else if (entry.is_regular_file()) {
            MemoryFile f;
            f.data = io::read_file(entry.path().string());
            struct stat st{};
            if (::stat(entry.path().c_str(), &st) == 0)
                f.executable = (st.st_mode & S_IXUSR) != 0;
            tree.files.emplace(rel, std::move(f));
        } else {
            throw ValidationError("unsupported file type in workflow dir: " + rel);
        }
    }
    return tree;
}

inline Bytes pack_dir(const std::string& root) {
    return pack_tree(load_tree_from_dir(root));
}

// Client-side extraction of fetched results; never used on worker nodes.
inline void write_tree_to_dir(const MemoryTree& tree, const std::string& root) {
    io::ensure_dir(root);
    for (const auto& d : tree.dirs) io::ensure_dir(fs::path(root) / d);
    for (const auto& [path, file] : tree.files) {
        fs::path target = fs::path(root) / path;
        io::ensure_dir(target.parent_path());
        io::write_file(target.string(), file.data);
        if (file.executable) ::chmod(target.c_str(), 0755);
    }
}

}  // namespace scw
