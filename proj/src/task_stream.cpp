#include <numeric>
#include <stdexcept>
#include <string>

#include "hfc/data.hpp"
#include "hfc/rng.hpp"

namespace hfc {

std::size_t TaskStream::classes_through(std::size_t t) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i <= t && i < tasks.size(); ++i) n += tasks[i].size();
  return n;
}

TaskStream split_tasks(std::size_t num_classes, std::size_t tasks, unsigned base_percent, std::uint64_t seed) {
  auto fail = [&](const std::string& what) {
    throw std::invalid_argument("split_tasks(" + std::to_string(num_classes) + " classes, T=" + std::to_string(tasks) +
                                ", base " + std::to_string(base_percent) + "%): " + what);
  };
  if (num_classes == 0) fail("no classes");
  if (tasks == 0) fail("T must be positive");
  if (base_percent != 0 && base_percent != 50) fail("base percentage must be 0 or 50");

  std::vector<std::size_t> sizes;
  if (base_percent == 0) {
    if (num_classes % tasks != 0) fail("class count is not divisible by T");
    sizes.assign(tasks, num_classes / tasks);
  } else {
    if (num_classes % 2 != 0) fail("class count is odd");
    const std::size_t rest = num_classes / 2;
    if (rest % tasks != 0) fail("remaining half is not divisible by T");
    sizes.push_back(rest);
    sizes.insert(sizes.end(), tasks, rest / tasks);
  }

  TaskStream s;
  s.base_percent = base_percent;
  s.seed = seed;
  s.order.resize(num_classes);
  std::iota(s.order.begin(), s.order.end(), std::size_t{0});
  Rng rng = make_rng(seed, "class-order");
  shuffle(s.order, rng);
  s.global_of.resize(num_classes);
  for (std::size_t g = 0; g < num_classes; ++g) s.global_of[s.order[g]] = g;

  std::size_t next = 0;
  for (std::size_t t = 0; t < sizes.size(); ++t) {
    std::vector<std::size_t> block(sizes[t]);
    std::iota(block.begin(), block.end(), next);
    next += sizes[t];
    s.tasks.push_back(std::move(block));
    s.class_task.insert(s.class_task.end(), sizes[t], t);
  }
  return s;
}

Dataset relabel(const Dataset& data, const TaskStream& stream) {
  if (data.num_classes != stream.num_classes()) {
    throw std::invalid_argument("relabel: dataset has " + std::to_string(data.num_classes) + " classes, stream " +
                                std::to_string(stream.num_classes()));
  }
  Dataset out = data;
  for (std::size_t& label : out.labels) label = stream.global_of.at(label);
  return out;
}

}  // namespace hfc
