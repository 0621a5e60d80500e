#include "attrec/item_index.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <thread>

#include "json.hpp"

namespace attrec {

using nlohmann::json;

ItemIndex ItemIndex::build(const Catalog& catalog, const Model& model, int threads) {
  if (catalog.items.empty()) throw DataError("ItemIndex::build: empty catalog");
  ItemIndex index;
  index.dim_ = model.params.config.proj_dim;
  index.num_attrs_ = model.pool == PoolKind::Attribute ? catalog.num_attrs() : 1;
  index.encoder_hash_ = model.params.payload_hash();
  index.vocab_hash_ = model.vocab.hash();
  const int n = catalog.size();
  index.item_ids_.reserve(static_cast<size_t>(n));
  for (const auto& item : catalog.items) index.item_ids_.push_back(item.item_id);
  index.storage_.assign(static_cast<size_t>(index.num_attrs_) * static_cast<size_t>(n) *
                            static_cast<size_t>(index.dim_),
                        0.0);

  auto encode_range = [&](int begin, int end) {
    for (int i = begin; i < end; ++i) {
      MultiVectorRepr repr = encode_item(model, catalog.items[static_cast<size_t>(i)]);
      if (repr.num_attrs != index.num_attrs_)
        throw DataError("ItemIndex::build: item arity mismatch at " + index.item_ids_[static_cast<size_t>(i)]);
      for (const auto& e : repr.entries) {
        double* dst = index.storage_.data() +
                      (static_cast<size_t>(e.attr_index) * static_cast<size_t>(n) +
                       static_cast<size_t>(i)) *
                          static_cast<size_t>(index.dim_);
        std::copy(e.v.begin(), e.v.end(), dst);
      }
    }
  };

  const int workers = std::max(1, std::min(threads, n));
  if (workers == 1) {
    encode_range(0, n);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
    const int chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const int begin = w * chunk;
      const int end = std::min(n, begin + chunk);
      if (begin >= end) continue;
      pool.emplace_back([&, w, begin, end]() {
        try {
          encode_range(begin, end);
        } catch (...) {
          errors[static_cast<size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return index;
}

ItemIndex ItemIndex::from_reprs(const std::vector<std::string>& ids,
                                const std::vector<MultiVectorRepr>& reprs) {
  if (ids.empty() || ids.size() != reprs.size())
    throw DataError("ItemIndex::from_reprs: ids and reprs must align");
  ItemIndex index;
  index.num_attrs_ = reprs[0].num_attrs;
  index.dim_ = reprs[0].entries.empty() ? 0 : static_cast<int>(reprs[0].entries[0].v.size());
  index.item_ids_ = ids;
  const size_t n = ids.size();
  index.storage_.assign(static_cast<size_t>(index.num_attrs_) * n * static_cast<size_t>(index.dim_), 0.0);
  for (size_t i = 0; i < n; ++i) {
    if (reprs[i].num_attrs != index.num_attrs_)
      throw DataError("ItemIndex::from_reprs: arity mismatch at " + ids[i]);
    for (const auto& e : reprs[i].entries) {
      if (static_cast<int>(e.v.size()) != index.dim_)
        throw DataError("ItemIndex::from_reprs: dimension mismatch at " + ids[i]);
      double* dst = index.storage_.data() +
                    (static_cast<size_t>(e.attr_index) * n + i) * static_cast<size_t>(index.dim_);
      std::copy(e.v.begin(), e.v.end(), dst);
    }
  }
  return index;
}

int ItemIndex::position_of(const std::string& item_id) const {
  for (size_t i = 0; i < item_ids_.size(); ++i)
    if (item_ids_[i] == item_id) return static_cast<int>(i);
  return -1;
}

MultiVectorRepr ItemIndex::item_repr(int item) const {
  MultiVectorRepr repr;
  repr.num_attrs = num_attrs_;
  for (int j = 0; j < num_attrs_; ++j) {
    auto v = vec(item, j);
    repr.entries.push_back({0, j, std::vector<double>(v.begin(), v.end())});
  }
  return repr;
}

uint64_t ItemIndex::payload_hash() const {
  Fnv1a h;
  h.update_u64(static_cast<uint64_t>(num_attrs_));
  h.update_u64(static_cast<uint64_t>(dim_));
  for (const auto& id : item_ids_) {
    h.update(id);
    h.update("\n", 1);
  }
  for (double v : storage_) h.update_f64(v);
  return h.digest();
}

namespace {

constexpr char kIndexMagic[8] = {'A', 'T', 'R', 'E', 'I', 'D', 'X', '1'};

void write_u64(std::ostream& out, uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void ItemIndex::save(const std::string& path, const std::string& metadata_json) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("ItemIndex::save: cannot open " + path);
  json header{
      {"num_attrs", num_attrs_},
      {"dim", dim_},
      {"num_items", static_cast<int>(item_ids_.size())},
      {"item_ids", item_ids_},
      {"encoder_hash", hash_hex(encoder_hash_)},
      {"vocab_hash", hash_hex(vocab_hash_)},
      {"payload_hash", hash_hex(payload_hash())},
      {"metadata", metadata_json.empty() ? json(nullptr) : json::parse(metadata_json)},
  };
  const std::string header_bytes = header.dump();
  out.write(kIndexMagic, 8);
  write_u64(out, header_bytes.size());
  out.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));
  for (double v : storage_) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(out, bits);
  }
  if (!out) throw DataError("ItemIndex::save: write failed for " + path);
}

ItemIndex ItemIndex::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("ItemIndex::load: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kIndexMagic, 8) != 0)
    throw DataError("ItemIndex::load: bad magic in " + path);
  const uint64_t header_len = read_u64(in);
  std::string header_bytes(header_len, '\0');
  in.read(header_bytes.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataError("ItemIndex::load: truncated header in " + path);
  json header = json::parse(header_bytes);

  ItemIndex index;
  index.num_attrs_ = header.at("num_attrs").get<int>();
  index.dim_ = header.at("dim").get<int>();
  index.item_ids_ = header.at("item_ids").get<std::vector<std::string>>();
  const auto n = static_cast<size_t>(header.at("num_items").get<int>());
  if (n != index.item_ids_.size()) throw DataError("ItemIndex::load: id table mismatch");
  index.encoder_hash_ = std::stoull(header.at("encoder_hash").get<std::string>(), nullptr, 16);
  index.vocab_hash_ = std::stoull(header.at("vocab_hash").get<std::string>(), nullptr, 16);
  index.metadata_json_ = header.at("metadata").is_null() ? "" : header.at("metadata").dump();
  index.storage_.resize(static_cast<size_t>(index.num_attrs_) * n * static_cast<size_t>(index.dim_));
  for (double& v : index.storage_) {
    uint64_t bits = read_u64(in);
    std::memcpy(&v, &bits, 8);
  }
  if (!in) throw DataError("ItemIndex::load: truncated payload in " + path);
  if (hash_hex(index.payload_hash()) != header.at("payload_hash").get<std::string>())
    throw DataError("ItemIndex::load: payload hash mismatch in " + path);
  return index;
}

int rank_of_target(std::span<const double> scores, const std::vector<std::string>& item_ids,
                   int target_pos) {
  const double target_score = scores[static_cast<size_t>(target_pos)];
  const std::string& target_id = item_ids[static_cast<size_t>(target_pos)];
  int rank = 1;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (static_cast<int>(i) == target_pos) continue;
    if (scores[i] > target_score || (scores[i] == target_score && item_ids[i] < target_id)) ++rank;
  }
  return rank;
}

std::vector<Recommendation> recommend_topk(const InteractionSequence& seq, const ItemIndex& index,
                                           const Model& model, const Catalog& catalog, int k,
                                           const MatchConfig& config, bool mask_seen) {
  if (k < 1) throw ConfigError("recommend_topk: K must be >= 1");
  if (index.encoder_hash() != model.params.payload_hash())
    throw DataError("recommend_topk: index was built with different encoder parameters");
  MultiVectorRepr user = encode_sequence(model, seq, catalog);
  std::vector<double> scores = batch_score(user, index, config);

  std::vector<int> order(scores.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  if (mask_seen) {
    std::erase_if(order, [&](int i) {
      return std::find(seq.item_ids.begin(), seq.item_ids.end(),
                       index.item_ids()[static_cast<size_t>(i)]) != seq.item_ids.end();
    });
  }
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
      return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    return index.item_ids()[static_cast<size_t>(a)] < index.item_ids()[static_cast<size_t>(b)];
  });
  if (static_cast<int>(order.size()) > k) order.resize(static_cast<size_t>(k));

  std::vector<Recommendation> out;
  out.reserve(order.size());
  for (int i : order) {
    Recommendation rec;
    rec.item_id = index.item_ids()[static_cast<size_t>(i)];
    MultiVectorRepr item = index.item_repr(i);
    rec.breakdown = match_score(user, item, config);
    rec.score = scores[static_cast<size_t>(i)];
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace attrec
