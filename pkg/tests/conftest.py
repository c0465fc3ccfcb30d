"""Shared fixtures: a small hand-written technique corpus with enough
vocabulary separation that ranking behaves predictably, plus assembled
pipeline artifacts over the deterministic reference backend.
"""

from __future__ import annotations

import random

import pytest

from ttpmap.backends import reference_backend
from ttpmap.bm25 import PostingsIndex
from ttpmap.corpus import load_catalog
from ttpmap.pipeline import Artifacts, PipelineConfig
from ttpmap.stage2 import bake_store

LOREM = (
    "adversary operator implant loader persistence privilege escalation "
    "collection staging exfiltration network traffic protocol channel "
    "payload dropper beacon campaign infrastructure victim host endpoint"
).split()


def toy_docs() -> list[dict]:
    return [
        {
            "id": "T1059",
            "title": "Command and Scripting Interpreter",
            "sections": [
                {
                    "kind": "description",
                    "text": (
                        "Adversaries may abuse command and script interpreters to execute "
                        "commands, scripts, or binaries. Interpreters such as PowerShell, "
                        "Unix shells, and Python provide direct interaction with systems. "
                        "Attackers commonly execute malicious scripts through these interpreters."
                    ),
                    "source_ref": None,
                },
                {
                    "kind": "detection",
                    "text": "Monitor for interpreter process launches with suspicious script arguments.",
                    "source_ref": None,
                },
            ],
        },
        {
            "id": "T1053",
            "title": "Scheduled Task/Job",
            "sections": [
                {
                    "kind": "description",
                    "text": (
                        "Adversaries may abuse task scheduling functionality to facilitate "
                        "initial or recurring execution of malicious code. Utilities such as "
                        "cron, at, and the Windows Task Scheduler allow programs to run at a "
                        "specified date and time. Scheduled tasks persist across reboots."
                    ),
                    "source_ref": None,
                },
                {
                    "kind": "mitigation",
                    "text": "Restrict scheduled task creation rights to administrators only.",
                    "source_ref": None,
                },
            ],
        },
        {
            "id": "T1566",
            "title": "Phishing",
            "sections": [
                {
                    "kind": "description",
                    "text": (
                        "Adversaries may send phishing messages to gain access to victim "
                        "systems. Spearphishing emails carry malicious attachments or links. "
                        "The email lures the recipient into opening the attachment."
                    ),
                    "source_ref": None,
                },
            ],
        },
        {
            "id": "T1021",
            "title": "Remote Services",
            "sections": [
                {
                    "kind": "description",
                    "text": (
                        "Adversaries may use valid accounts to log into remote services such "
                        "as SMB, RDP, SSH, or VNC and perform lateral movement across the "
                        "network to reach other hosts."
                    ),
                    "source_ref": None,
                },
            ],
        },
        {
            "id": "T1486",
            "title": "Data Encrypted for Impact",
            "sections": [
                {
                    "kind": "description",
                    "text": (
                        "Adversaries may encrypt data on target systems to interrupt "
                        "availability. Ransomware encrypts files and demands payment for "
                        "the decryption key."
                    ),
                    "source_ref": None,
                },
            ],
        },
        {
            "id": "T1071",
            "title": "Application Layer Protocol",
            "sections": [
                {
                    "kind": "description",
                    "text": (
                        "Adversaries may communicate over application layer protocols to "
                        "blend command traffic with existing network traffic."
                    ),
                    "source_ref": None,
                },
                {
                    "kind": "procedure-example",
                    "text": (
                        "The implant tunneled its beacon traffic over DNS and HTTPS to the "
                        "staging server during the intrusion."
                    ),
                    "source_ref": "RPT-001",
                },
                {
                    "kind": "procedure-example",
                    "text": "A second operator relayed commands through a custom mail protocol.",
                    "source_ref": "RPT-002",
                },
            ],
        },
        {
            "id": "T1600",
            "title": "Weaken Encryption",
            "sections": [],
        },
    ]


def synth_docs(n: int, seed: int = 11, tokens_per_doc: int = 40) -> list[dict]:
    """n synthetic techniques with mildly overlapping vocabulary.

    Ids start at T1100 to stay clear of the hand-written toy docs.
    """
    rng = random.Random(seed)
    docs = []
    for i in range(n):
        tid = f"T{1100 + i:04d}"
        words = [rng.choice(LOREM) for _ in range(tokens_per_doc)]
        words.append(f"marker{i}")
        docs.append(
            {
                "id": tid,
                "title": f"Synthetic Technique {i}",
                "sections": [
                    {"kind": "description", "text": " ".join(words), "source_ref": None}
                ],
            }
        )
    return docs


QUERIES = [
    "The actor executed a malicious PowerShell script through the interpreter",
    "Persistence was established with a scheduled task running at boot time",
    "A spearphishing email delivered the attachment to the victim",
    "Lateral movement used RDP with valid accounts across hosts",
    "Files were encrypted and a ransom note demanded payment",
]


@pytest.fixture(scope="session")
def catalog():
    return load_catalog(toy_docs())


@pytest.fixture(scope="session")
def backend():
    return reference_backend(dim=48, seed=7)


@pytest.fixture(scope="session")
def artifacts(catalog, backend):
    index = PostingsIndex.build(catalog.items["stage2"], catalog_digest=catalog.digest)
    store = bake_store(catalog, backend, profile="stage2")
    return Artifacts(
        catalog=catalog, index=index, store=store, bi_backend=backend, mono_backend=backend
    )


@pytest.fixture(scope="session")
def config():
    return PipelineConfig()
