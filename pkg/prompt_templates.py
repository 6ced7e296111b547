"""
prompt_templates.py
-------------------
Prompt wording used by `debate.build_prompt`.

The wording is pinned by golden files under tests/fixtures/. Any edit here
must bump TEMPLATE_VERSION and regenerate those fixtures, because transcripts
record the version they were produced with.

Structure of a round-2+ prompt:

    DEBATE_INTRO
    (BLOCK_HEADER | BLOCK_HEADER_WITH_CONFIDENCE) <response text> BLOCK_FOOTER   x agents
    DEBATE_OUTRO

Each response text sits between two newlines, so whitespace tokenization
never merges it with the surrounding template.
"""

TEMPLATE_VERSION = "v1"

FIRST_ROUND = "{question}"

DEBATE_INTRO = (
    "{question}\n"
    "\n"
    "These are the responses from every agent in the previous round:\n"
)

BLOCK_HEADER = "\nAgent {agent_id} response:\n<<<\n"

BLOCK_HEADER_WITH_CONFIDENCE = "\nAgent {agent_id} response (confidence: {confidence:.2f}):\n<<<\n"

BLOCK_FOOTER = "\n>>>\n"

DEBATE_OUTRO = (
    "\nYou are agent {self_id}. Using these responses as additional advice, "
    "give an updated response. State the final answer at the end of your response."
)

# Read back by simulated agents that take their cue from the prompt text.
CONFIDENCE_HEADER_PATTERN = r"Agent (\d+) response \(confidence: ([0-9]+(?:\.[0-9]+)?)\):"

# Quoted in place of an empty response so the block still spans tokens.
EMPTY_BODY = "(no response)"
