"""Published dataset counts, checked only when the corpora are available locally.

Point the SPAMDETECT_* environment variables at the extracted datasets to run:
    SPAMDETECT_LINGSPAM_DIR, SPAMDETECT_SMS_CSV, SPAMDETECT_ENRON_DIR,
    SPAMDETECT_SPAMASSASSIN_DIR
"""

import os

import pytest

from spamdetect.corpus import combine, load_enron, load_lingspam, load_sms, load_spamassassin

LINGSPAM_DIR = os.environ.get("SPAMDETECT_LINGSPAM_DIR")
SMS_CSV = os.environ.get("SPAMDETECT_SMS_CSV")
ENRON_DIR = os.environ.get("SPAMDETECT_ENRON_DIR")
SA_DIR = os.environ.get("SPAMDETECT_SPAMASSASSIN_DIR")


def within_one_percent(got, want):
    return abs(got - want) / want <= 0.01


@pytest.mark.skipif(not LINGSPAM_DIR, reason="SPAMDETECT_LINGSPAM_DIR not set")
def test_lingspam_official_counts():
    corp = load_lingspam(LINGSPAM_DIR)
    assert len(corp) == 2893
    assert corp.n_spam == 481
    assert corp.n_ham == 2412


@pytest.mark.skipif(not SMS_CSV, reason="SPAMDETECT_SMS_CSV not set")
def test_sms_official_counts():
    corp = load_sms(SMS_CSV)
    assert len(corp) == 5574
    assert corp.n_spam == 724
    assert corp.n_ham == 4850


@pytest.mark.skipif(not ENRON_DIR, reason="SPAMDETECT_ENRON_DIR not set")
def test_enron_official_counts():
    corp = load_enron(ENRON_DIR)
    # public mirrors differ by a few corrupt/duplicate files
    assert within_one_percent(len(corp), 32638)
    assert within_one_percent(corp.n_spam, 16544)
    assert within_one_percent(corp.n_ham, 16094)


@pytest.mark.skipif(not SA_DIR, reason="SPAMDETECT_SPAMASSASSIN_DIR not set")
def test_spamassassin_official_counts():
    corp = load_spamassassin(SA_DIR)
    assert within_one_percent(len(corp), 6047)
    assert within_one_percent(corp.n_spam, 1897)
    assert within_one_percent(corp.n_ham, 4150)


@pytest.mark.skipif(
    not (LINGSPAM_DIR and SMS_CSV and ENRON_DIR and SA_DIR),
    reason="all four dataset locations must be set")
def test_combined_total():
    corpora = [load_lingspam(LINGSPAM_DIR), load_sms(SMS_CSV),
               load_enron(ENRON_DIR), load_spamassassin(SA_DIR)]
    total = len(combine(corpora))
    # 2893 + 5574 + 32638 + 6047
    assert within_one_percent(total, 47152)
