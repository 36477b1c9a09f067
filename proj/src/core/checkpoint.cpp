// SPDX-License-Identifier: Apache-2.0
#include "emofuse/checkpoint.hpp"

#include "emofuse/error.hpp"
#include "emofuse/textio.hpp"

namespace emofuse {

namespace {
constexpr const char *kMagic = "emofuse-checkpoint 1";
}

Checkpoint snapshot(const nn::ParameterStore &store,
                    std::vector<std::pair<std::string, std::string>> config) {
  Checkpoint ck;
  ck.config = std::move(config);
  for (const ad::Parameter *p : store.all())
    ck.tensors.emplace_back(p->name, p->value);
  return ck;
}

std::string serializeCheckpoint(const Checkpoint &ck) {
  std::string out = kMagic;
  out += '\n';
  for (const auto &[k, v] : ck.config)
    out += "config\t" + k + "\t" + v + "\n";
  for (const auto &[name, t] : ck.tensors) {
    out += "param\t" + name + "\t";
    for (std::size_t i = 0; i < t.rank(); ++i) {
      if (i)
        out += ',';
      out += std::to_string(t.shape()[i]);
    }
    out += '\t';
    for (std::size_t i = 0; i < t.numel(); ++i) {
      if (i)
        out += ' ';
      out += text::formatDouble(t[i]);
    }
    out += '\n';
  }
  return out;
}

Checkpoint parseCheckpoint(const std::string &bytes, const std::string &origin) {
  Checkpoint ck;
  auto lines = text::split(bytes, '\n');
  if (lines.empty() || lines[0] != kMagic)
    throw FormatError(origin, 1, "missing checkpoint header");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::string_view line = lines[i];
    if (line.empty())
      continue;
    auto cols = text::split(line, '\t');
    if (cols[0] == "config" && cols.size() == 3) {
      ck.config.emplace_back(std::string(cols[1]), std::string(cols[2]));
    } else if (cols[0] == "param" && cols.size() == 4) {
      Shape shape;
      if (!cols[2].empty())
        for (auto d : text::split(cols[2], ',')) {
          auto v = text::parseInt(d);
          if (!v || *v < 0)
            throw FormatError(origin, i + 1, "bad dimension");
          shape.push_back(static_cast<std::size_t>(*v));
        }
      std::vector<double> values;
      values.reserve(shapeNumel(shape));
      if (!cols[3].empty())
        for (auto tok : text::split(cols[3], ' ')) {
          auto v = text::parseDouble(tok);
          if (!v)
            throw FormatError(origin, i + 1, "bad value '" + std::string(tok) + "'");
          values.push_back(*v);
        }
      if (values.size() != shapeNumel(shape))
        throw FormatError(origin, i + 1, "value count does not match shape");
      ck.tensors.emplace_back(std::string(cols[1]),
                              Tensor(std::move(shape), std::move(values)));
    } else {
      throw FormatError(origin, i + 1, "unrecognised checkpoint line");
    }
  }
  return ck;
}

void writeCheckpoint(const std::string &path, const Checkpoint &ck) {
  text::writeFile(path, serializeCheckpoint(ck));
}

Checkpoint readCheckpoint(const std::string &path) {
  return parseCheckpoint(text::readFile(path), path);
}

void restore(nn::ParameterStore &store, const Checkpoint &ck) {
  auto params = store.all();
  if (params.size() != ck.tensors.size())
    throw ShapeError("checkpoint holds " + std::to_string(ck.tensors.size()) +
                     " tensors, model has " + std::to_string(params.size()));
  for (const auto &[name, t] : ck.tensors) {
    ad::Parameter *p = store.find(name);
    if (!p)
      throw ShapeError("checkpoint tensor " + name + " not in model");
    if (p->value.shape() != t.shape())
      throw ShapeError("checkpoint tensor " + name + " has shape " +
                       shapeToString(t.shape()) + ", model expects " +
                       shapeToString(p->value.shape()));
    p->value = t;
  }
}

} // namespace emofuse
