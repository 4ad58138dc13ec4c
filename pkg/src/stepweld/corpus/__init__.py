from .kb import (
    KnowledgeBase,
    KnowledgeBaseError,
    StepDescription,
    Task,
    load_knowledge_base,
    save_knowledge_base,
)
from .transcripts import (
    NarratedVideo,
    NarrationSegment,
    TranscriptError,
    load_segments_jsonl,
    load_transcript,
    parse_jsonl_cues,
    parse_srt,
    parse_webvtt,
    save_segments_jsonl,
    window_segments,
)

__all__ = [
    "KnowledgeBase",
    "KnowledgeBaseError",
    "StepDescription",
    "Task",
    "load_knowledge_base",
    "save_knowledge_base",
    "NarratedVideo",
    "NarrationSegment",
    "TranscriptError",
    "load_segments_jsonl",
    "load_transcript",
    "parse_jsonl_cues",
    "parse_srt",
    "parse_webvtt",
    "save_segments_jsonl",
    "window_segments",
]
