#include "memreduce/core/placement.hpp"

#include "memreduce/error.hpp"

namespace memreduce {

PlaceId partition_to_place(PartitionId partition, std::size_t num_places) {
  if (num_places == 0) throw Error(ErrorCode::InvalidArgument, "numPlaces must be >= 1");
  return static_cast<PlaceId>(partition % num_places);
}

std::vector<PlaceId> placement_map(std::size_t num_partitions, std::size_t num_places) {
  std::vector<PlaceId> map(num_partitions);
  for (std::size_t p = 0; p < num_partitions; ++p) map[p] = partition_to_place(static_cast<PartitionId>(p), num_places);
  return map;
}

}  // namespace memreduce
