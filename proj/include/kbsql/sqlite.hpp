#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <variant>
#include <vector>

struct sqlite3;
struct sqlite3_stmt;

namespace kbsql {

struct Blob {
  std::vector<std::uint8_t> bytes;
  bool operator==(const Blob&) const = default;
};

// One result cell. monostate is SQL NULL.
using Cell = std::variant<std::monostate, std::int64_t, double, std::string, Blob>;
using Row = std::vector<Cell>;

namespace sqlite {

enum class OpenMode { ReadOnly, ReadWrite, Create };

// Owning connection handle.
class Connection {
 public:
  Connection(const std::filesystem::path& file, OpenMode mode);
  ~Connection();
  Connection(Connection&& other) noexcept;
  Connection& operator=(Connection&& other) noexcept;
  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;

  // Runs one or more statements, discarding results. Throws IoError.
  void exec(const std::string& sql);

  // Runs a single query and collects every row. Throws IoError.
  std::vector<Row> query(const std::string& sql);

  sqlite3* handle() const noexcept { return db_; }

 private:
  sqlite3* db_ = nullptr;
};

// Owning prepared statement.
class Statement {
 public:
  Statement(Connection& conn, const std::string& sql);
  ~Statement();
  Statement(const Statement&) = delete;
  Statement& operator=(const Statement&) = delete;

  // Advances one row. Returns false when done; throws IoError on failure
  // (with the raw sqlite result code available through last_code()).
  bool step();
  Row row() const;
  int column_count() const;
  std::int64_t vm_steps() const;
  int last_code() const noexcept { return last_code_; }

 private:
  sqlite3_stmt* stmt_ = nullptr;
  sqlite3* db_ = nullptr;
  int last_code_ = 0;
};

}  // namespace sqlite
}  // namespace kbsql
