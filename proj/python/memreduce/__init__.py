"""In-memory and out-of-core MapReduce engines with benchmark workloads."""

from ._memreduce import (
    CscBlock,
    MemreduceError,
    Runner,
    Store,
    assemble_vector,
    decode_pair,
    deserialize_batch,
    encode_pair,
    generate_text,
    matvec_oracle,
    output_checksum,
    quantized_checksum,
    read_pair_file,
    report_columns,
    serialize_batch,
    wordcount_oracle,
    write_pair_file,
)

__all__ = [
    "CscBlock",
    "MemreduceError",
    "Runner",
    "Store",
    "assemble_vector",
    "decode_pair",
    "deserialize_batch",
    "encode_pair",
    "generate_text",
    "matvec_oracle",
    "output_checksum",
    "quantized_checksum",
    "read_pair_file",
    "report_columns",
    "serialize_batch",
    "wordcount_oracle",
    "write_pair_file",
]
