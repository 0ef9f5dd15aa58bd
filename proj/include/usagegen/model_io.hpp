#pragma once

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "usagegen/digest.hpp"
#include "usagegen/model.hpp"

namespace usagegen {

// Result of parse_model: either a valid model (diagnostics then holds only
// warnings) or no model plus at least one error. Never a model with errors.
struct ParseResult {
  std::optional<UsageModel> model;
  ValidationReport diagnostics;
};

namespace detail {

// 17 significant digits round-trips every double exactly.
inline std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string json_string(std::string_view s) {
  std::string out = "\"";
  for (char ch : s) {
    switch (ch) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\b': out += "\\b"; break;
      case '\f': out += "\\f"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(ch) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", ch);
          out += buf;
        } else {
          out += ch;
        }
    }
  }
  out += '"';
  return out;
}

struct ModelIndex {
  std::map<std::string, std::size_t> param;
  std::map<std::string, std::map<std::string, std::size_t>> cls;
  explicit ModelIndex(const UsageModel& m) {
    for (std::size_t i = 0; i < m.parameters.size(); ++i) {
      param[m.parameters[i].id] = i;
      for (std::size_t j = 0; j < m.parameters[i].classes.size(); ++j)
        cls[m.parameters[i].id][m.parameters[i].classes[j].id] = j;
    }
  }
  std::size_t param_at(const std::string& id) const {
    auto it = param.find(id);
    if (it == param.end())
      throw UsageError(codes::schema,
                       "serialize_model requires a valid model (unknown parameter '" +
                           id + "')");
    return it->second;
  }
  std::size_t class_at(const std::string& pid, const std::string& cid) const {
    auto p = cls.find(pid);
    if (p != cls.end()) {
      auto c = p->second.find(cid);
      if (c != p->second.end()) return c->second;
    }
    throw UsageError(codes::schema,
                     "serialize_model requires a valid model (unknown class '" +
                         cid + "' of '" + pid + "')");
  }
  // map entries reordered by parameter declaration position
  std::vector<std::pair<std::string, std::string>> by_decl(
      const std::map<std::string, std::string>& entries) const {
    std::vector<std::pair<std::string, std::string>> v(entries.begin(), entries.end());
    std::sort(v.begin(), v.end(), [&](const auto& a, const auto& b) {
      return param_at(a.first) < param_at(b.first);
    });
    return v;
  }
};

}  // namespace detail

/// Canonical text form: fixed key order, reals with 17 significant digits,
/// cpts ordered by chain position, rows in parent-combination order with the
/// first listed parent varying fastest, map entries in declaration order.
/// Equal models produce byte-identical output. Optional free-text fields are
/// emitted only when non-empty; temperature is always explicit.
inline std::string serialize_model(const UsageModel& model) {
  using detail::fmt_real;
  using detail::json_string;
  detail::ModelIndex ix(model);

  std::string out = "{\n";
  out += "  \"schema_version\": 1,\n";
  out += "  \"name\": " + json_string(model.name) + ",\n";
  out += "  \"temperature\": " + fmt_real(model.temperature) + ",\n";

  out += "  \"parameters\": [\n";
  for (std::size_t i = 0; i < model.parameters.size(); ++i) {
    const Parameter& p = model.parameters[i];
    out += "    {\n      \"id\": " + json_string(p.id) + ",\n";
    if (!p.category.empty())
      out += "      \"category\": " + json_string(p.category) + ",\n";
    out += "      \"classes\": [\n";
    for (std::size_t j = 0; j < p.classes.size(); ++j) {
      const EquivalenceClass& c = p.classes[j];
      out += "        {\"id\": " + json_string(c.id);
      if (!c.description.empty())
        out += ", \"description\": " + json_string(c.description);
      if (c.range)
        out += ", \"range\": [" + fmt_real(c.range->lo) + ", " +
               fmt_real(c.range->hi) + "]";
      out += j + 1 < p.classes.size() ? "},\n" : "}\n";
    }
    out += "      ]\n    }";
    out += i + 1 < model.parameters.size() ? ",\n" : "\n";
  }
  out += "  ],\n";

  out += "  \"chain_order\": [";
  for (std::size_t i = 0; i < model.chain_order.size(); ++i)
    out += (i ? ", " : "") + json_string(model.chain_order[i]);
  out += "],\n";

  // cpts in chain order, one row per line
  std::map<std::string, std::size_t> chainpos;
  for (std::size_t i = 0; i < model.chain_order.size(); ++i)
    chainpos[model.chain_order[i]] = i;
  std::vector<const ConditionalProbabilityTable*> cpts;
  for (const auto& t : model.cpts) cpts.push_back(&t);
  std::sort(cpts.begin(), cpts.end(), [&](const auto* a, const auto* b) {
    return chainpos.at(a->param) < chainpos.at(b->param);
  });

  out += "  \"cpts\": [\n";
  for (std::size_t i = 0; i < cpts.size(); ++i) {
    const auto& t = *cpts[i];
    out += "    {\n      \"param\": " + json_string(t.param) + ",\n";
    out += "      \"given\": [";
    for (std::size_t g = 0; g < t.given.size(); ++g)
      out += (g ? ", " : "") + json_string(t.given[g]);
    out += "],\n";

    std::vector<const CptRow*> rows;
    for (const auto& r : t.rows) rows.push_back(&r);
    auto row_key = [&](const CptRow& r) {
      std::size_t key = 0, stride = 1;
      for (const auto& parent : t.given) {
        key += ix.class_at(parent, r.when.at(parent)) * stride;
        stride *= model.parameters[ix.param_at(parent)].classes.size();
      }
      return key;
    };
    std::sort(rows.begin(), rows.end(), [&](const auto* a, const auto* b) {
      return row_key(*a) < row_key(*b);
    });

    out += "      \"rows\": [\n";
    for (std::size_t r = 0; r < rows.size(); ++r) {
      out += "        {\"when\": {";
      bool first = true;
      for (const auto& parent : t.given) {
        out += (first ? "" : ", ") + json_string(parent) + ": " +
               json_string(rows[r]->when.at(parent));
        first = false;
      }
      out += "}, \"probs\": {";
      first = true;
      for (const auto& c : model.parameters[ix.param_at(t.param)].classes) {
        auto it = rows[r]->probs.find(c.id);
        if (it == rows[r]->probs.end()) continue;
        out += (first ? "" : ", ") + json_string(c.id) + ": " + fmt_real(it->second);
        first = false;
      }
      out += r + 1 < rows.size() ? "}},\n" : "}}\n";
    }
    out += "      ]\n    }";
    out += i + 1 < cpts.size() ? ",\n" : "\n";
  }
  out += "  ],\n";

  if (model.constraints.forbidden.empty()) {
    out += "  \"constraints\": {\"forbid\": []},\n";
  } else {
    out += "  \"constraints\": {\n    \"forbid\": [\n";
    for (std::size_t i = 0; i < model.constraints.forbidden.size(); ++i) {
      out += "      {";
      bool first = true;
      for (const auto& [pid, cid] : ix.by_decl(model.constraints.forbidden[i].entries)) {
        out += (first ? "" : ", ") + json_string(pid) + ": " + json_string(cid);
        first = false;
      }
      out += i + 1 < model.constraints.forbidden.size() ? "},\n" : "}\n";
    }
    out += "    ]\n  },\n";
  }

  if (model.requirements.empty()) {
    out += "  \"requirements\": []\n";
  } else {
    out += "  \"requirements\": [\n";
    for (std::size_t i = 0; i < model.requirements.size(); ++i) {
      const Requirement& r = model.requirements[i];
      out += "    {\"id\": " + json_string(r.id) + ", \"predicate\": {";
      std::vector<std::pair<std::string, const std::set<std::string>*>> entries;
      for (const auto& [pid, allowed] : r.predicate)
        entries.emplace_back(pid, &allowed);
      std::sort(entries.begin(), entries.end(), [&](const auto& a, const auto& b) {
        return ix.param_at(a.first) < ix.param_at(b.first);
      });
      bool firstp = true;
      for (const auto& [pid, allowed] : entries) {
        out += (firstp ? "" : ", ") + json_string(pid) + ": [";
        firstp = false;
        bool firstc = true;
        for (const auto& c : model.parameters[ix.param_at(pid)].classes) {
          if (!allowed->count(c.id)) continue;
          out += (firstc ? "" : ", ") + json_string(c.id);
          firstc = false;
        }
        out += "]";
      }
      out += i + 1 < model.requirements.size() ? "}},\n" : "}}\n";
    }
    out += "  ]\n";
  }
  out += "}\n";
  return out;
}

/// Parses a model document. On success the model passes validate_model with
/// no errors and its cpts/rows are stored in canonical order; on failure all
/// diagnostics found in one pass are reported and no model is returned.
/// Warnings may accompany a successful parse.
inline ParseResult parse_model(const std::string& text) {
  using nlohmann::json;
  ParseResult result;
  auto error = [&](const std::string& path, const std::string& msg,
                   std::string_view code = codes::schema) {
    result.diagnostics.entries.push_back(
        {Severity::error, path, std::string(code), msg});
  };

  json doc = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded()) {
    error("/", "document is not well-formed");
    return result;
  }
  if (!doc.is_object()) {
    error("/", "document root must be an object");
    return result;
  }

  static const std::set<std::string> kRootKeys = {
      "schema_version", "name",        "temperature", "parameters",
      "chain_order",    "cpts",        "constraints", "requirements"};
  for (const auto& [key, _] : doc.items())
    if (!kRootKeys.count(key)) error("/" + key, "unknown key '" + key + "'");

  auto get_string = [&](const json& j, const std::string& path,
                        const char* what) -> std::optional<std::string> {
    if (!j.is_string()) {
      error(path, std::string(what) + " must be a string");
      return std::nullopt;
    }
    return j.get<std::string>();
  };

  if (!doc.contains("schema_version"))
    error("/schema_version", "missing schema_version");
  else if (!doc["schema_version"].is_number_integer() ||
           doc["schema_version"].get<std::int64_t>() != 1)
    error("/schema_version", "unsupported schema_version (expected 1)");

  UsageModel model;
  if (doc.contains("name")) {
    if (auto s = get_string(doc["name"], "/name", "name")) model.name = *s;
  }
  if (doc.contains("temperature")) {
    if (!doc["temperature"].is_number())
      error("/temperature", "temperature must be a number");
    else
      model.temperature = doc["temperature"].get<double>();
  }

  if (!doc.contains("parameters") || !doc["parameters"].is_array()) {
    error("/parameters", "parameters must be an array");
  } else {
    for (std::size_t i = 0; i < doc["parameters"].size(); ++i) {
      const json& jp = doc["parameters"][i];
      std::string path = detail::idx_path("/parameters", i);
      Parameter p;
      if (!jp.is_object()) {
        error(path, "parameter must be an object");
        model.parameters.push_back(p);
        continue;
      }
      for (const auto& [key, _] : jp.items())
        if (key != "id" && key != "category" && key != "classes")
          error(path + "/" + key, "unknown key '" + key + "'");
      if (!jp.contains("id"))
        error(path + "/id", "missing id");
      else if (auto s = get_string(jp["id"], path + "/id", "id"))
        p.id = *s;
      if (jp.contains("category"))
        if (auto s = get_string(jp["category"], path + "/category", "category"))
          p.category = *s;
      if (!jp.contains("classes") || !jp["classes"].is_array()) {
        error(path + "/classes", "classes must be an array");
      } else {
        for (std::size_t j = 0; j < jp["classes"].size(); ++j) {
          const json& jc = jp["classes"][j];
          std::string cpath = detail::idx_path(path + "/classes", j);
          EquivalenceClass c;
          if (jc.is_object()) {
            for (const auto& [key, _] : jc.items())
              if (key != "id" && key != "description" && key != "range")
                error(cpath + "/" + key, "unknown key '" + key + "'");
            if (!jc.contains("id"))
              error(cpath + "/id", "missing id");
            else if (auto s = get_string(jc["id"], cpath + "/id", "id"))
              c.id = *s;
            if (jc.contains("description"))
              if (auto s = get_string(jc["description"], cpath + "/description",
                                      "description"))
                c.description = *s;
            if (jc.contains("range")) {
              const json& jr = jc["range"];
              if (!jr.is_array() || jr.size() != 2 || !jr[0].is_number() ||
                  !jr[1].is_number())
                error(cpath + "/range", "range must be [lo, hi] with two numbers");
              else
                c.range = ClassRange{jr[0].get<double>(), jr[1].get<double>()};
            }
          } else if (jc.is_string()) {
            c.id = jc.get<std::string>();  // shorthand for {"id": ...}
          } else {
            error(cpath, "class must be an object or a string id");
          }
          p.classes.push_back(std::move(c));
        }
      }
      model.parameters.push_back(std::move(p));
    }
  }

  if (!doc.contains("chain_order") || !doc["chain_order"].is_array()) {
    error("/chain_order", "chain_order must be an array of parameter ids");
  } else {
    for (std::size_t i = 0; i < doc["chain_order"].size(); ++i)
      if (auto s = get_string(doc["chain_order"][i],
                              detail::idx_path("/chain_order", i), "entry"))
        model.chain_order.push_back(*s);
  }

  if (!doc.contains("cpts") || !doc["cpts"].is_array()) {
    error("/cpts", "cpts must be an array");
  } else {
    for (std::size_t i = 0; i < doc["cpts"].size(); ++i) {
      const json& jt = doc["cpts"][i];
      std::string path = detail::idx_path("/cpts", i);
      ConditionalProbabilityTable t;
      if (!jt.is_object()) {
        error(path, "cpt must be an object");
        model.cpts.push_back(t);
        continue;
      }
      for (const auto& [key, _] : jt.items())
        if (key != "param" && key != "given" && key != "rows")
          error(path + "/" + key, "unknown key '" + key + "'");
      if (!jt.contains("param"))
        error(path + "/param", "missing param");
      else if (auto s = get_string(jt["param"], path + "/param", "param"))
        t.param = *s;
      if (jt.contains("given")) {
        if (!jt["given"].is_array())
          error(path + "/given", "given must be an array of parameter ids");
        else
          for (std::size_t g = 0; g < jt["given"].size(); ++g)
            if (auto s = get_string(jt["given"][g],
                                    detail::idx_path(path + "/given", g), "entry"))
              t.given.push_back(*s);
      }
      if (!jt.contains("rows") || !jt["rows"].is_array()) {
        error(path + "/rows", "rows must be an array");
      } else {
        for (std::size_t r = 0; r < jt["rows"].size(); ++r) {
          const json& jr = jt["rows"][r];
          std::string rpath = detail::idx_path(path + "/rows", r);
          CptRow row;
          if (!jr.is_object()) {
            error(rpath, "row must be an object");
            t.rows.push_back(row);
            continue;
          }
          for (const auto& [key, _] : jr.items())
            if (key != "when" && key != "probs")
              error(rpath + "/" + key, "unknown key '" + key + "'");
          if (jr.contains("when")) {
            if (!jr["when"].is_object())
              error(rpath + "/when", "when must be a map of parent id to class id");
            else
              for (const auto& [pid, jc] : jr["when"].items())
                if (auto s = get_string(jc, rpath + "/when/" + pid, "class"))
                  row.when[pid] = *s;
          }
          if (!jr.contains("probs") || !jr["probs"].is_object()) {
            error(rpath + "/probs", "probs must be a map of class id to number");
          } else {
            for (const auto& [cid, jv] : jr["probs"].items()) {
              if (!jv.is_number())
                error(rpath + "/probs/" + cid, "probability must be a number");
              else
                row.probs[cid] = jv.get<double>();
            }
          }
          t.rows.push_back(std::move(row));
        }
      }
      model.cpts.push_back(std::move(t));
    }
  }

  if (doc.contains("constraints")) {
    const json& jc = doc["constraints"];
    if (!jc.is_object()) {
      error("/constraints", "constraints must be an object");
    } else {
      for (const auto& [key, _] : jc.items())
        if (key != "forbid")
          error("/constraints/" + key, "unknown key '" + key + "'");
      if (jc.contains("forbid")) {
        if (!jc["forbid"].is_array()) {
          error("/constraints/forbid", "forbid must be an array");
        } else {
          for (std::size_t i = 0; i < jc["forbid"].size(); ++i) {
            const json& ji = jc["forbid"][i];
            std::string path = detail::idx_path("/constraints/forbid", i);
            ForbiddenItem item;
            if (!ji.is_object()) {
              error(path, "forbidden item must be a map of parameter id to class id");
            } else {
              for (const auto& [pid, jv] : ji.items())
                if (auto s = get_string(jv, path + "/" + pid, "class"))
                  item.entries[pid] = *s;
            }
            model.constraints.forbidden.push_back(std::move(item));
          }
        }
      }
    }
  }

  if (doc.contains("requirements")) {
    if (!doc["requirements"].is_array()) {
      error("/requirements", "requirements must be an array");
    } else {
      for (std::size_t i = 0; i < doc["requirements"].size(); ++i) {
        const json& jr = doc["requirements"][i];
        std::string path = detail::idx_path("/requirements", i);
        Requirement r;
        if (!jr.is_object()) {
          error(path, "requirement must be an object");
          model.requirements.push_back(r);
          continue;
        }
        for (const auto& [key, _] : jr.items())
          if (key != "id" && key != "predicate")
            error(path + "/" + key, "unknown key '" + key + "'");
        if (!jr.contains("id"))
          error(path + "/id", "missing id");
        else if (auto s = get_string(jr["id"], path + "/id", "id"))
          r.id = *s;
        if (!jr.contains("predicate") || !jr["predicate"].is_object()) {
          error(path + "/predicate",
                "predicate must be a map of parameter id to class list");
        } else {
          for (const auto& [pid, jlist] : jr["predicate"].items()) {
            if (!jlist.is_array()) {
              error(path + "/predicate/" + pid, "allowed classes must be an array");
              continue;
            }
            auto& allowed = r.predicate[pid];
            for (std::size_t k = 0; k < jlist.size(); ++k)
              if (auto s = get_string(jlist[k],
                                      detail::idx_path(path + "/predicate/" + pid, k),
                                      "class"))
                allowed.insert(*s);
          }
        }
        model.requirements.push_back(std::move(r));
      }
    }
  }

  if (!result.diagnostics.ok()) return result;

  ValidationReport semantic = validate_model(model);
  result.diagnostics.entries.insert(result.diagnostics.entries.end(),
                                    semantic.entries.begin(),
                                    semantic.entries.end());
  if (!result.diagnostics.ok()) return result;

  // Normalize storage order so equal documents yield identical models:
  // cpts by chain position, rows by parent-combination index.
  detail::ModelIndex ix(model);
  std::map<std::string, std::size_t> chainpos;
  for (std::size_t i = 0; i < model.chain_order.size(); ++i)
    chainpos[model.chain_order[i]] = i;
  std::sort(model.cpts.begin(), model.cpts.end(),
            [&](const auto& a, const auto& b) {
              return chainpos.at(a.param) < chainpos.at(b.param);
            });
  for (auto& t : model.cpts) {
    auto row_key = [&](const CptRow& r) {
      std::size_t key = 0, stride = 1;
      for (const auto& parent : t.given) {
        key += ix.class_at(parent, r.when.at(parent)) * stride;
        stride *= model.parameters[ix.param_at(parent)].classes.size();
      }
      return key;
    };
    std::sort(t.rows.begin(), t.rows.end(), [&](const CptRow& a, const CptRow& b) {
      return row_key(a) < row_key(b);
    });
  }

  result.model = std::move(model);
  return result;
}

/// Hex-encoded SHA-256 of the canonical serialization. Stable across storage
/// order differences; changes iff the model content changes.
inline std::string model_digest(const UsageModel& model) {
  return sha256_hex(serialize_model(model));
}

/// Equality up to storage order: canonical serializations are byte-identical.
inline bool structurally_equal(const UsageModel& a, const UsageModel& b) {
  return serialize_model(a) == serialize_model(b);
}

}  // namespace usagegen
