// Copyright 2026 The scw Authors
// SPDX-License-Identifier: Apache-2.0
//
// File I/O used by every module that touches persistent storage. All writes
// route through the write recorder so the at-rest property suites can observe
// exactly what reaches disk.

#pragma once

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <filesystem>
#include <string>

#include "scw/bytes.hpp"
#include "scw/errors.hpp"
#include "scw/recorder.hpp"

namespace scw::io {

namespace fs = std::filesystem;

inline void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

class FileHandle {
public:
    FileHandle() = default;
    FileHandle(const FileHandle&) = delete;
    FileHandle& operator=(const FileHandle&) = delete;
    FileHandle(FileHandle&& o) noexcept : fd_(o.fd_), path_(std::move(o.path_)) {
        o.fd_ = -1;
    }
    FileHandle& operator=(FileHandle&& o) noexcept {
        if (this != &o) {
            close();
            fd_ = o.fd_;
            path_ = std::move(o.path_);
            o.fd_ = -1;
        }
        return *this;
    }
    ~FileHandle() { close(); }

    static FileHandle open_write(const std::string& path, bool truncate = true) {
        int flags = O_WRONLY | O_CREAT | (truncate ? O_TRUNC : 0);
        int fd = ::open(path.c_str(), flags, 0600);
        if (fd < 0) throw IoError("cannot open " + path + " for writing: " + std::strerror(errno));
        return FileHandle(fd, path);
    }

    static FileHandle open_rw(const std::string& path, bool create = false) {
        int flags = O_RDWR | (create ? O_CREAT : 0);
        int fd = ::open(path.c_str(), flags, 0600);
        if (fd < 0) throw IoError("cannot open " + path + ": " + std::strerror(errno));
        return FileHandle(fd, path);
    }

    static FileHandle open_read(const std::string& path) {
        int fd = ::open(path.c_str(), O_RDONLY);
        if (fd < 0) {
            if (errno == ENOENT) throw NotFoundError("no such file: " + path);
            throw IoError("cannot open " + path + ": " + std::strerror(errno));
        }
        return FileHandle(fd, path);
    }

    void write(ByteView data) {
        WriteRecorder::instance().on_write(path_, offset_, data);
        std::size_t done = 0;
        while (done < data.size()) {
            ssize_t n = ::write(fd_, data.data() + done, data.size() - done);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw IoError("write to " + path_ + " failed: " + std::strerror(errno));
            }
            done += static_cast<std::size_t>(n);
        }
        offset_ += data.size();
    }

    void pwrite_at(std::uint64_t offset, ByteView data) {
        WriteRecorder::instance().on_write(path_, offset, data);
        std::size_t done = 0;
        while (done < data.size()) {
            ssize_t n = ::pwrite(fd_, data.data() + done, data.size() - done,
                                 static_cast<off_t>(offset + done));
            if (n < 0) {
                if (errno == EINTR) continue;
                throw IoError("pwrite to " + path_ + " failed: " + std::strerror(errno));
            }
            done += static_cast<std::size_t>(n);
        }
    }

    Bytes pread_at(std::uint64_t offset, std::size_t len) const {
        Bytes out(len);
        std::size_t done = 0;
        while (done < len) {
            ssize_t n = ::pread(fd_, out.data() + done, len - done,
                                static_cast<off_t>(offset + done));
            if (n < 0) {
                if (errno == EINTR) continue;
                throw IoError("pread from " + path_ + " failed: " + std::strerror(errno));
            }
            if (n == 0) throw FormatError("unexpected end of file in " + path_);
            done += static_cast<std::size_t>(n);
        }
        return out;
    }

    void sync_data() {
        if (::fdatasync(fd_) != 0)
            throw IoError("fdatasync on " + path_ + " failed: " + std::strerror(errno));
    }

    std::uint64_t size() const {
        struct stat st{};
        if (::fstat(fd_, &st) != 0)
            throw IoError("fstat on " + path_ + " failed: " + std::strerror(errno));
        return static_cast<std::uint64_t>(st.st_size);
    }

    const std::string& path() const { return path_; }
    bool valid() const { return fd_ >= 0; }

    void close() {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

private:
    FileHandle(int fd, std::string path) : fd_(fd), path_(std::move(path)) {}
    int fd_ = -1;
    std::string path_;
    std::uint64_t offset_ = 0;
};

inline Bytes read_file(const std::string& path) {
    FileHandle f = FileHandle::open_read(path);
    return f.pread_at(0, static_cast<std::size_t>(f.size()));
}

inline void write_file(const std::string& path, ByteView data) {
    FileHandle f = FileHandle::open_write(path);
    f.write(data);
}

// Atomic replace: write to a temp sibling, then rename over the target.
inline void write_file_atomic(const std::string& path, ByteView data) {
    std::string tmp = path + ".tmp." + uuid4().substr(0, 8);
    {
        FileHandle f = FileHandle::open_write(tmp);
        f.write(data);
    }
    if (::rename(tmp.c_str(), path.c_str()) != 0) {
        ::unlink(tmp.c_str());
        throw IoError("rename " + tmp + " -> " + path + " failed: " + std::strerror(errno));
    }
}

inline void append_line(const std::string& path, const std::string& line) {
    int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0600);
    if (fd < 0) throw IoError("cannot open " + path + " for append: " + std::strerror(errno));
    std::string payload = line + "\n";
    WriteRecorder::instance().on_write(path, UINT64_MAX, as_bytes(payload));
    ssize_t n = ::write(fd, payload.data(), payload.size());
    ::close(fd);
    if (n != static_cast<ssize_t>(payload.size()))
        throw IoError("append to " + path + " failed");
}

}  // namespace scw::io
