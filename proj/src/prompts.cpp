#include "kbsql/prompts.hpp"

#include "kbsql/error.hpp"

namespace kbsql {

std::string PromptTemplate::text() const {
  std::string out = "DB Schema: " + schema_block + "\n\n";
  for (const auto& block : few_shot_blocks) out += block + "\n\n";
  out += target_block;
  return out;
}

namespace {

std::string knowledge_block(const std::string& question, const std::string& evidence) {
  return "Question: " + question + "\nEvidence: " + evidence;
}

std::string sql_block(const std::string& question, const std::string& evidence, const std::string& sql) {
  return "Question: " + question + "\nEvidence: " + evidence + "\nSQL: " + sql;
}

PromptTemplate fit_to_budget(PromptTemplate prompt, const DatabaseSchema& schema, std::size_t budget,
                             const RenderOptions& render) {
  prompt.schema_block = render_schema(schema, kUnlimitedBudget, render);
  while (true) {
    if (prompt.text().size() <= budget) return prompt;
    if (prompt.few_shot_blocks.empty()) break;
    prompt.few_shot_blocks.pop_back();
  }
  prompt.schema_block.clear();
  const std::size_t overhead = prompt.text().size();
  if (overhead > budget) {
    throw BudgetError("prompt needs " + std::to_string(overhead) +
                      " chars without examples or schema; budget is " + std::to_string(budget));
  }
  prompt.schema_block = render_schema(schema, budget - overhead, render);
  return prompt;
}

}  // namespace

PromptTemplate build_knowledge_prompt(const std::string& question, const DatabaseSchema& schema,
                                      const std::vector<ExampleTriplet>& examples, std::size_t budget,
                                      const RenderOptions& render) {
  PromptTemplate p;
  p.kind = PromptKind::KnowledgeGeneration;
  for (const auto& ex : examples) {
    p.few_shot_blocks.push_back(knowledge_block(ex.query.text, ex.knowledge.value_or("")));
  }
  p.target_block = "Question: " + question + "\nEvidence: ";
  return fit_to_budget(std::move(p), schema, budget, render);
}

PromptTemplate build_sql_prompt(const std::string& question, const std::string& knowledge,
                                const DatabaseSchema& schema, const std::vector<ExampleTriplet>& examples,
                                std::size_t budget, const RenderOptions& render) {
  PromptTemplate p;
  p.kind = PromptKind::SqlGeneration;
  for (const auto& ex : examples) {
    p.few_shot_blocks.push_back(sql_block(ex.query.text, ex.knowledge.value_or(""), ex.gold_sql.value_or("")));
  }
  p.target_block = "Question: " + question + "\nEvidence: " + knowledge + "\nSQL: ";
  return fit_to_budget(std::move(p), schema, budget, render);
}

PromptTemplate build_refinement_prompt(const std::string& question, const DatabaseSchema& schema,
                                       const std::vector<std::string>& retrieved, std::size_t budget) {
  PromptTemplate p;
  p.kind = PromptKind::KnowledgeGeneration;
  for (const auto& entry : retrieved) p.few_shot_blocks.push_back(knowledge_block(question, entry));
  p.target_block = "Question: " + question + "\nEvidence: ";
  return fit_to_budget(std::move(p), schema, budget, {});
}

}  // namespace kbsql
