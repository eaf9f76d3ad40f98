// Turns every <name>.sql script in a directory into <out>/<name>/<name>.sqlite,
// copying an optional <name>.descriptions.json sidecar next to it.
#include <filesystem>
#include <iostream>
#include <system_error>

#include "kbsql/error.hpp"
#include "kbsql/sqlite.hpp"
#include "kbsql/text.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: build_toy_dbs <sql-dir> <out-dir>\n";
    return 2;
  }
  const fs::path sql_dir = argv[1];
  const fs::path out_dir = argv[2];
  try {
    for (const auto& entry : fs::directory_iterator(sql_dir)) {
      if (entry.path().extension() != ".sql") continue;
      const auto name = entry.path().stem().string();
      const auto target_dir = out_dir / name;
      fs::create_directories(target_dir);
      const auto db = target_dir / (name + ".sqlite");
      fs::remove(db);
      kbsql::sqlite::Connection conn(db, kbsql::sqlite::OpenMode::Create);
      conn.exec(kbsql::read_file(entry.path()));
      const auto sidecar = sql_dir / (name + ".descriptions.json");
      if (fs::exists(sidecar)) {
        fs::copy_file(sidecar, target_dir / sidecar.filename(), fs::copy_options::overwrite_existing);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "build_toy_dbs: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
