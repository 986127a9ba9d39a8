"""
HopLink Protocol Definitions
Shared record format for every line-delimited JSON artifact: run traces,
evaluation checkpoints, per-instance reports and the gold-answer cache.
"""

import json
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Union


class RecordType:
    """Record type constants"""
    TRACE = "trace"
    INSTANCE = "instance"
    GOLD = "gold"
    LOAD_REPORT = "load_report"


class Protocol:
    """Handles record encoding/decoding for HopLink artifacts"""

    @staticmethod
    def create_trace(step: int, skill: str, inputs_digest: str, outputs: List[str],
                     detail: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """Create a pipeline trace record"""
        record = {
            "type": RecordType.TRACE,
            "step": step,
            "skill": skill,
            "inputs_digest": inputs_digest,
            "outputs": list(outputs),
        }
        if detail:
            record["detail"] = detail
        return record

    @staticmethod
    def create_gold(instance_id: str, answers: List[str]) -> Dict[str, Any]:
        """Create a gold-answer cache record"""
        return {"type": RecordType.GOLD, "id": instance_id, "answers": list(answers)}

    @staticmethod
    def encode_record(record: Dict[str, Any]) -> bytes:
        """Encode a record as one newline-terminated UTF-8 JSON line"""
        json_str = json.dumps(record, sort_keys=True, ensure_ascii=False)
        return json_str.encode('utf-8') + b'\n'

    @staticmethod
    def decode_record(data: Union[bytes, str]) -> Dict[str, Any]:
        """Decode one line back into a record dictionary"""
        if isinstance(data, bytes):
            data = data.decode('utf-8')
        return json.loads(data.strip())

    @staticmethod
    def append_record(path: Union[str, Path], record: Dict[str, Any]) -> None:
        """Append one record; a single write call per record"""
        with open(path, 'ab') as f:
            f.write(Protocol.encode_record(record))

    @staticmethod
    def read_records(path: Union[str, Path], record_type: Optional[str] = None) -> Iterator[Dict[str, Any]]:
        """Yield records from a line-delimited file, skipping a torn last line"""
        path = Path(path)
        if not path.exists():
            return
        with open(path, 'rb') as f:
            for raw in f:
                if not raw.strip():
                    continue
                try:
                    record = Protocol.decode_record(raw)
                except json.JSONDecodeError:
                    # interrupted append
                    continue
                if record_type is None or record.get("type") == record_type:
                    yield record
