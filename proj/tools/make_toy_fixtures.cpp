// Regenerates the mock LLM fixtures for the toy dataset by running the CLI
// stages against a scripted responder and recording every call.
//
//   make_toy_fixtures <toy-dir> <fixtures-out>
//   make_toy_fixtures --check <toy-dir> <fixtures-file>
//
// The toy dir must hold toy.ini, the record files and the built databases.
#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "kbsql/cli.hpp"
#include "kbsql/error.hpp"
#include "kbsql/text.hpp"

namespace fs = std::filesystem;
using namespace kbsql;

namespace {

struct Gold {
  std::string db_id;
  std::string evidence;
  std::string sql;
};

// Answers from the gold annotations of the toy records.
class ToyScript {
 public:
  explicit ToyScript(const std::vector<Dataset>& splits) {
    for (const auto& d : splits) {
      for (const auto& r : d.records) {
        by_question_[r.query.text] = {r.schema_ref, r.knowledge.value_or(""), r.gold_sql.value_or("")};
        if (r.knowledge) pool_[r.schema_ref].insert(*r.knowledge);
      }
    }
  }

  std::string respond(const std::string& prompt) const {
    const auto lines = split_lines(prompt);
    std::vector<std::pair<std::string, std::string>> blocks;  // (question, evidence) of every block
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (!lines[i].starts_with("Question: ")) continue;
      std::string evidence;
      if (i + 1 < lines.size() && lines[i + 1].starts_with("Evidence:")) evidence = trim(lines[i + 1].substr(9));
      blocks.emplace_back(lines[i].substr(10), evidence);
    }
    if (blocks.empty()) throw ParseError("prompt has no question");
    const auto target = blocks.back();
    blocks.pop_back();
    const auto it = by_question_.find(target.first);
    if (it == by_question_.end()) throw ParseError("unknown question: " + target.first);
    const Gold& gold = it->second;
    const auto h = fnv1a64(prompt);

    if (prompt.ends_with("SQL: ")) {
      const bool informed = !gold.evidence.empty() &&
                            normalize_knowledge(target.second).find(normalize_knowledge(gold.evidence)) !=
                                std::string::npos;
      const auto sql = informed ? gold.sql : "SELECT * FROM (" + gold.sql + ") WHERE 0";
      switch (h % 3) {
        case 0: return "```sql\n" + sql + "\n```";
        case 1: return sql + ";\nThis query answers the question.";
        default: return sql;
      }
    }

    const bool refinement =
        !blocks.empty() && std::all_of(blocks.begin(), blocks.end(), [&](const auto& b) { return b.first == target.first; });
    if (refinement || blocks.empty()) {
      for (const auto& b : blocks) {
        if (knowledge_exact_match(b.second, gold.evidence)) return gold.evidence + "\nQuestion: " + target.first;
      }
      return blocks.empty() ? std::string() : blocks.front().second;
    }

    const auto pool_it = pool_.find(gold.db_id);
    if (pool_it == pool_.end() || pool_it->second.empty()) return "";
    const std::vector<std::string> pool(pool_it->second.begin(), pool_it->second.end());
    const auto n = pool.size();
    std::ostringstream out;
    out << "1. " << pool[h % n] << "\n";
    out << "2. " << pool[(h / n) % n] << "\n";
    out << "Question: " << target.first << "\n";
    return out.str();
  }

 private:
  std::map<std::string, Gold> by_question_;
  std::map<std::string, std::set<std::string>> pool_;
};

int run_stage(std::vector<std::string> args, const BackendFactory& factory) {
  args.insert(args.begin(), "kbsql");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  const int rc = run_cli(static_cast<int>(argv.size()), argv.data(), out, std::cerr, factory);
  if (rc != 0) std::cerr << out.str();
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  const bool check = argc == 4 && std::string(argv[1]) == "--check";
  if (argc != 3 && !check) {
    std::cerr << "usage: make_toy_fixtures [--check] <toy-dir> <fixtures-file>\n";
    return 2;
  }
  const fs::path toy_dir = fs::absolute(argv[check ? 2 : 1]);
  const fs::path fixtures = fs::absolute(argv[check ? 3 : 2]);
  const fs::path scratch = fs::temp_directory_path() / ("kbsql-fixtures-" + std::to_string(::getpid()));
  fs::create_directories(scratch);

  try {
    const auto config = (toy_dir / "toy.ini").string();
    const std::vector<Dataset> splits{load_dataset(toy_dir / "train.json", DatasetFormat::Bird),
                                      load_dataset(toy_dir / "test.json", DatasetFormat::Bird, Split::Test)};
    const ToyScript script(splits);
    const BackendFactory factory = [&](const LlmConfig&) {
      return std::make_unique<FunctionBackend>([&](const std::string& p) { return script.respond(p); }, "toy-script");
    };
    auto in_scratch = [&](const std::string& name) { return (scratch / name).string(); };
    const std::vector<std::string> common{"--config", config, "--kb", in_scratch("kb.jsonl"),
                                          "--head", in_scratch("head.txt")};
    auto with = [&](std::vector<std::string> extra) {
      auto args = common;
      args.insert(args.end(), extra.begin(), extra.end());
      return args;
    };

    int rc = run_stage(with({"build-kb", "--ledger", in_scratch("l1.jsonl")}), factory);
    if (rc == 0) rc = run_stage(with({"train-retriever"}), factory);
    if (rc == 0) {
      rc = run_stage(with({"generate", "--outputs", in_scratch("o1.jsonl"), "--ledger", in_scratch("l2.jsonl")}),
                     factory);
    }
    if (rc == 0) {
      rc = run_stage(with({"generate", "--no-refinement", "--outputs", in_scratch("o2.jsonl"), "--ledger",
                           in_scratch("l3.jsonl")}),
                     factory);
    }
    if (rc != 0) {
      fs::remove_all(scratch);
      return rc;
    }

    CallLedger merged;
    for (const auto* name : {"l1.jsonl", "l2.jsonl", "l3.jsonl"}) {
      for (auto& r : CallLedger::load(scratch / name)) merged.append(std::move(r));
    }
    const auto fresh = scratch / "fixtures.jsonl";
    merged.save_fixtures(fresh);
    if (check) {
      const bool same = fs::exists(fixtures) && read_file(fixtures) == read_file(fresh);
      fs::remove_all(scratch);
      if (!same) {
        std::cerr << "fixtures at " << fixtures.string() << " are stale; rerun make_toy_fixtures\n";
        return 1;
      }
      std::cout << "fixtures up to date (" << merged.size() << " calls)\n";
      return 0;
    }
    write_file(fixtures, read_file(fresh));
    std::cout << "wrote " << fixtures.string() << " from " << merged.size() << " calls\n";
  } catch (const std::exception& e) {
    std::cerr << "make_toy_fixtures: " << e.what() << "\n";
    fs::remove_all(scratch);
    return 1;
  }
  fs::remove_all(scratch);
  return 0;
}
