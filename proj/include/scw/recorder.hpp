// Copyright 2026 The scw Authors
// SPDX-License-Identifier: Apache-2.0
//
// Instrumented write recorder. When enabled, every persistent write issued
// through scw::io is mirrored to an in-memory inspection channel, which the
// plaintext-never-at-rest property suites scan for sensitive byte windows.

#pragma once

#include <atomic>
#include <cstdint>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "scw/bytes.hpp"

namespace scw {

struct WriteEvent {
    std::string path;
    std::uint64_t offset = 0;
    Bytes data;
};

class WriteRecorder {
public:
    static WriteRecorder& instance() {
        static WriteRecorder recorder;
        return recorder;
    }

    void start() {
        std::lock_guard lock(mutex_);
        events_.clear();
        active_.store(true, std::memory_order_release);
    }

    void stop() { active_.store(false, std::memory_order_release); }

    bool active() const { return active_.load(std::memory_order_acquire); }

    void on_write(std::string_view path, std::uint64_t offset, ByteView data) {
        if (!active()) return;
        std::lock_guard lock(mutex_);
        if (!active_.load(std::memory_order_relaxed)) return;
        events_.push_back(WriteEvent{std::string(path), offset,
                                     Bytes(data.begin(), data.end())});
    }

    std::vector<WriteEvent> snapshot() const {
        std::lock_guard lock(mutex_);
        return events_;
    }

    std::size_t event_count() const {
        std::lock_guard lock(mutex_);
        return events_.size();
    }

    std::vector<WriteEvent> take() {
        std::lock_guard lock(mutex_);
        std::vector<WriteEvent> out;
        out.swap(events_);
        return out;
    }

private:
    WriteRecorder() = default;
    std::atomic<bool> active_{false};
    mutable std::mutex mutex_;
    std::vector<WriteEvent> events_;
};

// Scans recorded writes for sensitive content. Windows of `window` bytes are
// indexed by an 8-byte prefix, then confirmed with a full comparison so hash
// collisions cannot produce false hits.
class SensitiveScanner {
public:
    explicit SensitiveScanner(std::size_t window = 64) : window_(window) {}

    // Registers every `window`-byte window of `secret`; shorter secrets are
    // registered whole.
    void add_secret(ByteView secret) {
        if (secret.empty()) return;
        std::size_t w = std::min(window_, secret.size());
        for (std::size_t off = 0; off + w <= secret.size(); ++off) {
            Bytes win(secret.begin() + static_cast<std::ptrdiff_t>(off),
                      secret.begin() + static_cast<std::ptrdiff_t>(off + w));
            std::uint64_t key = prefix_key(win.data(), win.size());
            index_[key].push_back(std::move(win));
            min_len_ = std::min(min_len_, w);
        }
    }

    // Returns the path of the first offending write, or empty when clean.
    std::string scan(const std::vector<WriteEvent>& events) const {
        for (const WriteEvent& ev : events) {
            if (contains_secret(ev.data)) return ev.path;
        }
        return {};
    }

    bool contains_secret(ByteView data) const {
        if (index_.empty() || data.size() < min_len_) return false;
        for (std::size_t off = 0; off + min_len_ <= data.size(); ++off) {
            std::uint64_t key = prefix_key(data.data() + off,
                                           data.size() - off);
            auto it = index_.find(key);
            if (it == index_.end()) continue;
            for (const Bytes& win : it->second) {
                if (off + win.size() <= data.size() &&
                    std::memcmp(data.data() + off, win.data(), win.size()) == 0)
                    return true;
            }
        }
        return false;
    }

private:
    static std::uint64_t prefix_key(const std::uint8_t* p, std::size_t avail) {
        std::uint64_t key = 0;
        std::size_t n = std::min<std::size_t>(8, avail);
        std::memcpy(&key, p, n);
        return key;
    }

    std::size_t window_;
    std::size_t min_len_ = SIZE_MAX;
    std::unordered_map<std::uint64_t, std::vector<Bytes>> index_;
};

}  // namespace scw
