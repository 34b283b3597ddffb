#include "tracetune/store.hpp"

#include "tracetune/digest.hpp"
#include "tracetune/error.hpp"

#include <sqlite3.h>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iterator>
#include <thread>

namespace tracetune {

namespace fs = std::filesystem;

namespace {

std::atomic<std::uint64_t> g_tmp_counter{0};

void write_atomic(const fs::path& dest, std::span<const std::uint8_t> bytes) {
    const fs::path tmp = dest.string() + ".tmp" + std::to_string(g_tmp_counter.fetch_add(1)) + "-" +
                         std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error(ErrorCode::StorageFailure, "cannot write image file", tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, dest, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw Error(ErrorCode::StorageFailure, "cannot move image file into place", dest.string());
    }
}

bool is_digest(const std::string& d) {
    if (d.size() != 64) return false;
    for (char c : d) {
        if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
    }
    return true;
}

} // namespace

ImageStore::ImageStore(fs::path dir, std::size_t cache_entries) : dir_(std::move(dir)), cache_entries_(cache_entries) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw Error(ErrorCode::StorageFailure, "cannot create image directory", dir_.string());
}

fs::path ImageStore::path_for(const std::string& digest) const {
    if (!is_digest(digest)) throw Error(ErrorCode::StorageFailure, "not an image digest", digest);
    return dir_ / (digest + ".png");
}

std::string ImageStore::put(const Image& img) {
    const auto bytes = encode_png(img);
    const std::string digest = sha256_hex(bytes);
    const fs::path p = path_for(digest);
    if (!fs::exists(p)) write_atomic(p, bytes);
    remember(digest, std::make_shared<const Image>(img));
    return digest;
}

std::string ImageStore::put_png(std::span<const std::uint8_t> bytes) {
    return put(decode_png(bytes));
}

void ImageStore::adopt(const std::string& digest, std::span<const std::uint8_t> bytes) {
    if (sha256_hex(bytes) != digest) throw Error(ErrorCode::StorageFailure, "image does not match its digest", digest);
    const fs::path p = path_for(digest);
    if (!fs::exists(p)) write_atomic(p, bytes);
}

bool ImageStore::contains(const std::string& digest) const {
    return is_digest(digest) && fs::exists(path_for(digest));
}

std::vector<std::uint8_t> ImageStore::png(const std::string& digest) const {
    std::ifstream in(path_for(digest), std::ios::binary);
    if (!in) throw Error(ErrorCode::StorageFailure, "image not in store", digest);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::shared_ptr<const Image> ImageStore::get(const std::string& digest) const {
    {
        std::lock_guard lock(mutex_);
        for (auto it = lru_.begin(); it != lru_.end(); ++it) {
            if (it->first == digest) {
                lru_.splice(lru_.begin(), lru_, it);
                return lru_.front().second;
            }
        }
    }
    std::shared_ptr<const Image> img;
    try {
        img = std::make_shared<const Image>(decode_png(png(digest)));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::StorageFailure) throw;
        throw Error(ErrorCode::StorageFailure, "stored image is unreadable", digest);
    }
    remember(digest, img);
    return img;
}

void ImageStore::remember(const std::string& digest, std::shared_ptr<const Image> img) const {
    if (cache_entries_ == 0) return;
    std::lock_guard lock(mutex_);
    for (auto it = lru_.begin(); it != lru_.end(); ++it) {
        if (it->first == digest) {
            lru_.erase(it);
            break;
        }
    }
    lru_.emplace_front(digest, std::move(img));
    while (lru_.size() > cache_entries_) lru_.pop_back();
}

// ---------------------------------------------------------------------------

namespace {

struct Stmt {
    sqlite3_stmt* s = nullptr;
    Stmt(sqlite3* db, const char* sql) {
        if (sqlite3_prepare_v2(db, sql, -1, &s, nullptr) != SQLITE_OK) {
            throw Error(ErrorCode::StorageFailure, "cannot prepare statement", sqlite3_errmsg(db));
        }
    }
    ~Stmt() { sqlite3_finalize(s); }
    Stmt(const Stmt&) = delete;
    Stmt& operator=(const Stmt&) = delete;

    void bind(int i, const std::string& v) { sqlite3_bind_text(s, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT); }
    std::string text(int i) const {
        const auto* p = sqlite3_column_text(s, i);
        return p ? std::string(reinterpret_cast<const char*>(p), sqlite3_column_bytes(s, i)) : std::string();
    }
};

} // namespace

SessionStore::SessionStore(const std::string& path) {
    if (sqlite3_open_v2(path.c_str(), &db_, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX,
                        nullptr) != SQLITE_OK) {
        std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
        sqlite3_close(db_);
        db_ = nullptr;
        throw Error(ErrorCode::StorageFailure, "cannot open session database", path + ": " + msg);
    }
    exec("PRAGMA journal_mode=WAL");
    exec("CREATE TABLE IF NOT EXISTS sessions (id TEXT PRIMARY KEY, doc TEXT NOT NULL)");
    exec("CREATE TABLE IF NOT EXISTS nodes (session_id TEXT NOT NULL, node_id TEXT NOT NULL, doc TEXT NOT NULL, "
         "PRIMARY KEY (session_id, node_id))");
    load_all();
}

SessionStore::~SessionStore() {
    sqlite3_close(db_);
}

void SessionStore::exec(const char* sql) {
    char* err = nullptr;
    if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
        std::string msg = err ? err : "unknown";
        sqlite3_free(err);
        throw Error(ErrorCode::StorageFailure, "database statement failed", msg);
    }
}

void SessionStore::load_all() {
    Stmt q(db_, "SELECT id, doc FROM sessions");
    while (sqlite3_step(q.s) == SQLITE_ROW) {
        const std::string id = q.text(0);
        nlohmann::json doc = nlohmann::json::parse(q.text(1));
        doc["nodes"] = nlohmann::json::array();
        Stmt n(db_, "SELECT doc FROM nodes WHERE session_id = ? ORDER BY node_id");
        n.bind(1, id);
        while (sqlite3_step(n.s) == SQLITE_ROW) doc["nodes"].push_back(nlohmann::json::parse(n.text(0)));
        cache_.emplace(id, session_from_json(doc));
    }
}

void SessionStore::save(const Session& s) {
    check_forest(s);
    nlohmann::json doc = session_to_json(s);
    nlohmann::json nodes = std::move(doc["nodes"]);
    doc.erase("nodes");

    std::lock_guard wlock(write_mutex_);
    exec("BEGIN IMMEDIATE");
    try {
        {
            Stmt up(db_, "INSERT INTO sessions (id, doc) VALUES (?, ?) ON CONFLICT(id) DO UPDATE SET doc = excluded.doc");
            up.bind(1, s.session_id);
            up.bind(2, doc.dump());
            if (sqlite3_step(up.s) != SQLITE_DONE) throw Error(ErrorCode::StorageFailure, "cannot save session", sqlite3_errmsg(db_));
        }
        // Nodes are immutable, so existing rows are left alone.
        Stmt ins(db_, "INSERT OR IGNORE INTO nodes (session_id, node_id, doc) VALUES (?, ?, ?)");
        for (const auto& jn : nodes) {
            sqlite3_reset(ins.s);
            ins.bind(1, s.session_id);
            ins.bind(2, jn.at("node_id").get<std::string>());
            ins.bind(3, jn.dump());
            if (sqlite3_step(ins.s) != SQLITE_DONE) throw Error(ErrorCode::StorageFailure, "cannot save node", sqlite3_errmsg(db_));
        }
        exec("COMMIT");
    } catch (...) {
        sqlite3_exec(db_, "ROLLBACK", nullptr, nullptr, nullptr);
        throw;
    }
    std::unique_lock clock(cache_mutex_);
    cache_.insert_or_assign(s.session_id, s);
}

Session SessionStore::load(const std::string& session_id) const {
    std::shared_lock lock(cache_mutex_);
    auto it = cache_.find(session_id);
    if (it == cache_.end()) throw Error(ErrorCode::UnknownSession, "no such session", session_id);
    return it->second;
}

bool SessionStore::contains(const std::string& session_id) const {
    std::shared_lock lock(cache_mutex_);
    return cache_.contains(session_id);
}

std::vector<std::string> SessionStore::list() const {
    std::shared_lock lock(cache_mutex_);
    std::vector<std::string> out;
    for (const auto& [id, s] : cache_) out.push_back(id);
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace tracetune
