#pragma once

#include "tracetune/image.hpp"
#include "tracetune/session.hpp"

#include <filesystem>
#include <list>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

struct sqlite3;

namespace tracetune {

/// PNG files on disk keyed by content digest. Safe for concurrent use.
class ImageStore {
public:
    explicit ImageStore(std::filesystem::path dir, std::size_t cache_entries = 32);

    std::string put(const Image& img);
    /// Decodes (UndecodableImage on failure) and stores the canonical encoding.
    std::string put_png(std::span<const std::uint8_t> bytes);
    /// Store PNG bytes verbatim under `digest`; StorageFailure if the bytes
    /// do not hash to it.
    void adopt(const std::string& digest, std::span<const std::uint8_t> bytes);

    bool contains(const std::string& digest) const;
    std::shared_ptr<const Image> get(const std::string& digest) const; ///< throws StorageFailure
    std::vector<std::uint8_t> png(const std::string& digest) const;
    std::filesystem::path path_for(const std::string& digest) const;
    const std::filesystem::path& dir() const { return dir_; }

private:
    void remember(const std::string& digest, std::shared_ptr<const Image> img) const;

    std::filesystem::path dir_;
    std::size_t cache_entries_;
    mutable std::mutex mutex_;
    mutable std::list<std::pair<std::string, std::shared_ptr<const Image>>> lru_;
};

/// Session documents in an embedded SQLite database. Writes run in a
/// transaction; reads are served from an in-memory copy and never block
/// each other.
class SessionStore {
public:
    /// `path` may be ":memory:".
    explicit SessionStore(const std::string& path);
    ~SessionStore();
    SessionStore(const SessionStore&) = delete;
    SessionStore& operator=(const SessionStore&) = delete;

    void save(const Session& s);
    Session load(const std::string& session_id) const; ///< throws UnknownSession
    bool contains(const std::string& session_id) const;
    std::vector<std::string> list() const;

private:
    void exec(const char* sql);
    void load_all();

    sqlite3* db_ = nullptr;
    std::mutex write_mutex_;
    mutable std::shared_mutex cache_mutex_;
    std::unordered_map<std::string, Session> cache_;
};

} // namespace tracetune
