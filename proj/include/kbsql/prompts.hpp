#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "kbsql/dataset.hpp"

namespace kbsql {

enum class PromptKind { KnowledgeGeneration, SqlGeneration };

// A rendered prompt, kept in sections. text() joins them as
//
//   DB Schema: <schema>
//   <blank line>
//   Question: ... / Evidence: ... [/ SQL: ...]      (one block per example)
//   <blank line>
//   Question: <target>
//   Evidence: [<knowledge>
//   SQL: ]
//
// The knowledge-generation target ends with "Evidence: " and the SQL target
// with "SQL: ", with no trailing newline.
struct PromptTemplate {
  PromptKind kind = PromptKind::KnowledgeGeneration;
  std::string schema_block;
  std::vector<std::string> few_shot_blocks;
  std::string target_block;

  std::string text() const;
};

constexpr std::size_t kUnlimitedBudget = std::numeric_limits<std::size_t>::max();

// Over budget, examples are dropped from the tail first, then the schema is
// re-rendered into whatever room remains. Throws BudgetError when the prompt
// without examples and with an empty schema still does not fit.
PromptTemplate build_knowledge_prompt(const std::string& question, const DatabaseSchema& schema,
                                      const std::vector<ExampleTriplet>& examples,
                                      std::size_t budget = kUnlimitedBudget,
                                      const RenderOptions& render = {});

PromptTemplate build_sql_prompt(const std::string& question, const std::string& knowledge,
                                const DatabaseSchema& schema,
                                const std::vector<ExampleTriplet>& examples,
                                std::size_t budget = kUnlimitedBudget,
                                const RenderOptions& render = {});

// Knowledge-generation layout with each retrieved entry shown as the
// evidence of the target question; no candidate blocks when none were
// retrieved.
PromptTemplate build_refinement_prompt(const std::string& question, const DatabaseSchema& schema,
                                       const std::vector<std::string>& retrieved,
                                       std::size_t budget = kUnlimitedBudget);

}  // namespace kbsql
