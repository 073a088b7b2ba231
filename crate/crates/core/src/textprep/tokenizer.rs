use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tokenizers::decoders::DecoderWrapper;
use tokenizers::models::wordpiece::WordPiece;
use tokenizers::normalizers::bert::BertNormalizer;
use tokenizers::pre_tokenizers::bert::BertPreTokenizer;
use tokenizers::processors::PostProcessorWrapper;
use tokenizers::{
    AddedToken, Normalizer, OffsetReferential, OffsetType, PreTokenizedString, PreTokenizer,
    Tokenizer, TokenizerBuilder, TokenizerImpl,
};

use super::CleanText;
use crate::error::{Error, Result};

/// Special tokens every adapter must know, in vocabulary order for trained
/// vocabularies: padding, unknown, start, end, mask.
pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Fixed-length model input for one text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u32>,
}

impl TokenSequence {
    /// Padded length (the configured maximum sequence length).
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of real (unmasked) tokens, special tokens included.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }
}

/// A WordPiece subword tokenizer with BERT-style special tokens.
///
/// Special tokens are added here rather than by the wrapped tokenizer's post
/// processor, so adapters loaded from `vocab.txt`, from a full
/// `tokenizer.json`, or trained locally all produce the same layout:
/// `[CLS] pieces... [SEP] [PAD]...`.
#[derive(Clone)]
pub struct TokenizerAdapter {
    inner: Tokenizer,
    pad_id: u32,
    cls_id: u32,
    sep_id: u32,
}

impl std::fmt::Debug for TokenizerAdapter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TokenizerAdapter")
            .field("vocab_size", &self.vocab_size())
            .field("pad_id", &self.pad_id)
            .field("cls_id", &self.cls_id)
            .field("sep_id", &self.sep_id)
            .finish()
    }
}

impl TokenizerAdapter {
    fn from_tokenizer(inner: Tokenizer) -> Result<Self> {
        let id = |token: &str| {
            inner.token_to_id(token).ok_or_else(|| {
                Error::Config(format!("tokenizer vocabulary has no `{token}` token"))
            })
        };
        Ok(Self {
            pad_id: id("[PAD]")?,
            cls_id: id("[CLS]")?,
            sep_id: id("[SEP]")?,
            inner,
        })
    }

    /// Loads a `tokenizer.json`, a WordPiece `vocab.txt`, or a directory
    /// containing either.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.is_dir() {
            let json = path.join("tokenizer.json");
            if json.exists() {
                return Self::from_file(json);
            }
            return Self::from_file(path.join("vocab.txt"));
        }
        if !path.exists() {
            return Err(Error::Config(format!(
                "tokenizer not found at {}",
                path.display()
            )));
        }
        if path.extension().is_some_and(|ext| ext == "txt") {
            let model = WordPiece::from_file(&path.to_string_lossy())
                .unk_token("[UNK]".into())
                .build()
                .map_err(|e| Error::Config(format!("vocab {}: {e}", path.display())))?;
            return Self::from_tokenizer(Tokenizer::from(Self::bert_pipeline(model)?));
        }
        let inner = Tokenizer::from_file(path)
            .map_err(|e| Error::Config(format!("tokenizer {}: {e}", path.display())))?;
        Self::from_tokenizer(inner)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let inner: Tokenizer = json
            .parse()
            .map_err(|e| Error::Config(format!("tokenizer json: {e}")))?;
        Self::from_tokenizer(inner)
    }

    pub fn to_json(&self) -> Result<String> {
        self.inner
            .to_string(false)
            .map_err(|e| Error::Config(format!("tokenizer json: {e}")))
    }

    /// Builds a WordPiece vocabulary of at most `vocab_size` entries from the
    /// given texts. The five [`SPECIAL_TOKENS`] take ids 0..=4.
    ///
    /// The vocabulary holds every character seen (both as a word start and
    /// as a `##` continuation) and then the most frequent whole words, so any
    /// word can be spelled out. Ties are broken by text, which keeps the
    /// result identical across runs.
    pub fn train_wordpiece<I, S>(texts: I, vocab_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let budget = vocab_size.saturating_sub(SPECIAL_TOKENS.len());
        let normalizer = BertNormalizer::default();
        let mut words: HashMap<String, usize> = HashMap::new();
        let mut chars: HashMap<char, usize> = HashMap::new();
        for text in texts {
            let mut pre = PreTokenizedString::from(text.as_ref());
            pre.normalize(|n| normalizer.normalize(n))
                .and_then(|_| BertPreTokenizer.pre_tokenize(&mut pre))
                .map_err(|e| Error::Config(format!("tokenizer training: {e}")))?;
            for (word, _, _) in pre.get_splits(OffsetReferential::Original, OffsetType::Byte) {
                for c in word.chars() {
                    *chars.entry(c).or_default() += 1;
                }
                *words.entry(word.to_string()).or_default() += 1;
            }
        }
        let by_count = |a: &(usize, String), b: &(usize, String)| b.0.cmp(&a.0).then(a.1.cmp(&b.1));
        let mut char_rank: Vec<(usize, String)> =
            chars.into_iter().map(|(c, n)| (n, c.to_string())).collect();
        char_rank.sort_by(by_count);
        let mut tokens: Vec<String> = Vec::new();
        for (_, c) in &char_rank {
            if tokens.len() + 2 > budget {
                break;
            }
            tokens.push(c.clone());
            tokens.push(format!("##{c}"));
        }
        let mut word_rank: Vec<(usize, String)> = words
            .into_iter()
            .filter(|(w, _)| w.chars().count() > 1)
            .map(|(w, n)| (n, w))
            .collect();
        word_rank.sort_by(by_count);
        let room = budget.saturating_sub(tokens.len());
        tokens.extend(word_rank.into_iter().take(room).map(|(_, w)| w));
        tokens.sort();
        let vocab: ahash::AHashMap<String, u32> = SPECIAL_TOKENS
            .iter()
            .map(|t| t.to_string())
            .chain(tokens)
            .enumerate()
            .map(|(i, t)| (t, i as u32))
            .collect();
        let model = WordPiece::builder()
            .vocab(vocab)
            .unk_token("[UNK]".into())
            .build()
            .map_err(|e| Error::Config(format!("tokenizer training: {e}")))?;
        let mut tokenizer = Self::bert_pipeline(model)?;
        let special: Vec<AddedToken> = SPECIAL_TOKENS
            .iter()
            .map(|t| AddedToken::from(*t, true))
            .collect();
        tokenizer
            .add_special_tokens(special)
            .map_err(|e| Error::Config(format!("tokenizer training: {e}")))?;
        Self::from_tokenizer(Tokenizer::from(tokenizer))
    }

    fn bert_pipeline(
        model: WordPiece,
    ) -> Result<
        TokenizerImpl<WordPiece, BertNormalizer, BertPreTokenizer, PostProcessorWrapper, DecoderWrapper>,
    > {
        TokenizerBuilder::new()
            .with_model(model)
            .with_normalizer(Some(BertNormalizer::default()))
            .with_pre_tokenizer(Some(BertPreTokenizer))
            .build()
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Vocabulary size including added tokens; the embedding table of any
    /// model fed by this adapter needs at least this many rows.
    pub fn vocab_size(&self) -> usize {
        self.inner.get_vocab_size(true)
    }

    pub fn pad_id(&self) -> u32 {
        self.pad_id
    }

    pub fn cls_id(&self) -> u32 {
        self.cls_id
    }

    pub fn sep_id(&self) -> u32 {
        self.sep_id
    }

    /// Subword ids of `text` without special tokens.
    pub fn piece_ids(&self, text: &str) -> Result<Vec<u32>> {
        let encoding = self
            .inner
            .encode(text, false)
            .map_err(|e| Error::Config(format!("tokenization failed: {e}")))?;
        Ok(encoding.get_ids().to_vec())
    }

    /// Encodes `clean` as `[CLS] pieces [SEP]`, truncating the pieces so the
    /// result fits in `max_len`, then pads to exactly `max_len`.
    pub fn tokenize(&self, clean: &CleanText, max_len: usize) -> Result<TokenSequence> {
        if max_len < 2 {
            return Err(Error::Config(format!(
                "max_len must be at least 2, got {max_len}"
            )));
        }
        let mut pieces = self.piece_ids(clean.as_str())?;
        pieces.truncate(max_len - 2);
        let mut ids = Vec::with_capacity(max_len);
        ids.push(self.cls_id);
        ids.extend(pieces);
        ids.push(self.sep_id);
        let real = ids.len();
        ids.resize(max_len, self.pad_id);
        let mut attention_mask = vec![1; real];
        attention_mask.resize(max_len, 0);
        Ok(TokenSequence {
            ids,
            attention_mask,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textprep::clean_text;

    fn adapter() -> TokenizerAdapter {
        let texts = [
            "hello world",
            "hello there friend",
            "the world is big",
            "friendly hello to the world",
        ];
        TokenizerAdapter::train_wordpiece(texts, 200).unwrap()
    }

    #[test]
    fn special_tokens_take_first_ids() {
        let a = adapter();
        assert_eq!(a.pad_id(), 0);
        assert_eq!(a.cls_id(), 2);
        assert_eq!(a.sep_id(), 3);
    }

    #[test]
    fn training_is_reproducible() {
        let texts: Vec<String> = (0..200)
            .map(|i| format!("w{} shared x{} sunny coffee", i % 17, i % 5))
            .collect();
        let first = TokenizerAdapter::train_wordpiece(texts.clone(), 80).unwrap();
        for _ in 0..5 {
            let again = TokenizerAdapter::train_wordpiece(texts.clone(), 80).unwrap();
            assert_eq!(first.to_json().unwrap(), again.to_json().unwrap());
        }
    }

    #[test]
    fn empty_text_is_only_specials_and_padding() {
        let a = adapter();
        let seq = a.tokenize(&clean_text(""), 8).unwrap();
        assert_eq!(seq.ids, vec![2, 3, 0, 0, 0, 0, 0, 0]);
        assert_eq!(seq.attention_mask.iter().sum::<u32>(), 2);
    }

    #[test]
    fn shape_contract() {
        let a = adapter();
        let seq = a
            .tokenize(&clean_text("hello world the world is big hello friend"), 16)
            .unwrap();
        assert_eq!(seq.ids.len(), 16);
        assert_eq!(seq.attention_mask.len(), 16);
        let seq = a.tokenize(&clean_text("hello world is big"), 4).unwrap();
        assert_eq!(seq.ids.len(), 4);
        assert_eq!(seq.ids[3], a.sep_id());
        assert_eq!(seq.real_len(), 4);
    }

    #[test]
    fn repeated_word_repeats_ids() {
        let a = adapter();
        let seq = a.tokenize(&clean_text("hello hello"), 8).unwrap();
        assert_eq!(seq.ids[1], seq.ids[2]);
        assert_ne!(seq.ids[1], a.pad_id());
    }

    #[test]
    fn rejects_tiny_max_len() {
        let a = adapter();
        assert!(matches!(
            a.tokenize(&clean_text("hello"), 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn json_round_trip_preserves_ids() {
        let a = adapter();
        let b = TokenizerAdapter::from_json(&a.to_json().unwrap()).unwrap();
        let text = clean_text("friendly world hello");
        assert_eq!(a.tokenize(&text, 10).unwrap(), b.tokenize(&text, 10).unwrap());
    }

    #[test]
    fn missing_file_is_config_error() {
        assert!(matches!(
            TokenizerAdapter::from_file("/nonexistent/tokenizer.json"),
            Err(Error::Config(_))
        ));
    }
}
