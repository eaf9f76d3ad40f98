#include "kbsql/sqlite.hpp"

#include <sqlite3.h>

#include <utility>

#include "kbsql/error.hpp"

namespace kbsql::sqlite {

Connection::Connection(const std::filesystem::path& file, OpenMode mode) {
  int flags = 0;
  switch (mode) {
    case OpenMode::ReadOnly: flags = SQLITE_OPEN_READONLY; break;
    case OpenMode::ReadWrite: flags = SQLITE_OPEN_READWRITE; break;
    case OpenMode::Create: flags = SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE; break;
  }
  const int rc = sqlite3_open_v2(file.string().c_str(), &db_, flags | SQLITE_OPEN_NOMUTEX, nullptr);
  if (rc != SQLITE_OK) {
    std::string msg = db_ ? sqlite3_errmsg(db_) : sqlite3_errstr(rc);
    sqlite3_close_v2(db_);
    db_ = nullptr;
    throw IoError("cannot open database " + file.string() + ": " + msg);
  }
}

Connection::~Connection() {
  if (db_) sqlite3_close_v2(db_);
}

Connection::Connection(Connection&& other) noexcept : db_(std::exchange(other.db_, nullptr)) {}

Connection& Connection::operator=(Connection&& other) noexcept {
  if (this != &other) {
    if (db_) sqlite3_close_v2(db_);
    db_ = std::exchange(other.db_, nullptr);
  }
  return *this;
}

void Connection::exec(const std::string& sql) {
  char* err = nullptr;
  if (sqlite3_exec(db_, sql.c_str(), nullptr, nullptr, &err) != SQLITE_OK) {
    std::string msg = err ? err : "unknown error";
    sqlite3_free(err);
    throw IoError("sqlite exec failed: " + msg);
  }
}

std::vector<Row> Connection::query(const std::string& sql) {
  Statement stmt(*this, sql);
  std::vector<Row> rows;
  while (stmt.step()) rows.push_back(stmt.row());
  return rows;
}

Statement::Statement(Connection& conn, const std::string& sql) : db_(conn.handle()) {
  last_code_ = sqlite3_prepare_v2(db_, sql.c_str(), static_cast<int>(sql.size()), &stmt_, nullptr);
  if (last_code_ != SQLITE_OK) {
    throw IoError(std::string("sqlite prepare failed: ") + sqlite3_errmsg(db_));
  }
  if (stmt_ == nullptr) throw IoError("sqlite prepare produced no statement");
}

Statement::~Statement() { sqlite3_finalize(stmt_); }

bool Statement::step() {
  last_code_ = sqlite3_step(stmt_);
  if (last_code_ == SQLITE_ROW) return true;
  if (last_code_ == SQLITE_DONE) return false;
  throw IoError(std::string("sqlite step failed: ") + sqlite3_errmsg(db_));
}

int Statement::column_count() const { return sqlite3_column_count(stmt_); }

Row Statement::row() const {
  const int n = sqlite3_column_count(stmt_);
  Row row;
  row.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    switch (sqlite3_column_type(stmt_, i)) {
      case SQLITE_NULL: row.emplace_back(std::monostate{}); break;
      case SQLITE_INTEGER: row.emplace_back(static_cast<std::int64_t>(sqlite3_column_int64(stmt_, i))); break;
      case SQLITE_FLOAT: row.emplace_back(sqlite3_column_double(stmt_, i)); break;
      case SQLITE_TEXT: {
        const auto* p = reinterpret_cast<const char*>(sqlite3_column_text(stmt_, i));
        row.emplace_back(std::string(p, static_cast<std::size_t>(sqlite3_column_bytes(stmt_, i))));
        break;
      }
      default: {
        const auto* p = static_cast<const std::uint8_t*>(sqlite3_column_blob(stmt_, i));
        const auto len = static_cast<std::size_t>(sqlite3_column_bytes(stmt_, i));
        row.emplace_back(Blob{std::vector<std::uint8_t>(p, p + len)});
        break;
      }
    }
  }
  return row;
}

std::int64_t Statement::vm_steps() const {
  return sqlite3_stmt_status(stmt_, SQLITE_STMTSTATUS_VM_STEP, 0);
}

}  // namespace kbsql::sqlite
