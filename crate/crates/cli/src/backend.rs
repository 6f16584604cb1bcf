//! Choosing the encoder backend for a command.

use cog_core::corpus::Vocabulary;
use cog_core::encoder::{EncoderBackend, TokenEmbeddingTable};
use cog_core::index::PhraseIndex;
use cog_core::math::Matrix;
use cog_core::{ToyBackend, ToyParams};

use crate::args::{BackendArgs, BackendKind};
use crate::error::{CliError, CliResult};

/// Backend used to encode a corpus. A sidecar pairs the remote encoder with
/// the local token table of `params`, rounded to the `f32` values the index
/// stores so that the same backend can be rebuilt from the index later.
pub fn for_corpus(args: &BackendArgs, vocab: &Vocabulary, params: ToyParams) -> CliResult<Box<dyn EncoderBackend>> {
    match args.backend {
        BackendKind::Toy => Ok(Box::new(ToyBackend::new(params)?)),
        BackendKind::Sidecar => {
            let m = &params.token_table.0;
            let data = m.data.iter().map(|&x| f64::from(x as f32)).collect();
            let table = TokenEmbeddingTable(Matrix::from_vec(m.rows, m.cols, data));
            sidecar(args, vocab, table)
        }
    }
}

/// Backend matching a built index; refuses one whose fingerprint or
/// dimensions differ from the index header.
pub fn for_index(args: &BackendArgs, index: &PhraseIndex) -> CliResult<Box<dyn EncoderBackend>> {
    let backend: Box<dyn EncoderBackend> = match args.backend {
        BackendKind::Toy => {
            let params = index.backend.clone().ok_or_else(|| {
                CliError::Data("index holds no toy encoder parameters; it was built with --backend sidecar".into())
            })?;
            Box::new(ToyBackend::new(params)?)
        }
        BackendKind::Sidecar => {
            let data = index.token_table.iter().map(|&x| f64::from(x)).collect();
            let table = TokenEmbeddingTable(Matrix::from_vec(index.vocab_size(), index.header.d, data));
            sidecar(args, &index.vocab, table)?
        }
    };
    index.check_backend(backend.as_ref())?;
    Ok(backend)
}

#[cfg(feature = "sidecar")]
fn sidecar(args: &BackendArgs, vocab: &Vocabulary, table: TokenEmbeddingTable) -> CliResult<Box<dyn EncoderBackend>> {
    let url = args.sidecar_url.as_deref().ok_or_else(|| CliError::Usage("--backend sidecar needs --sidecar-url".into()))?;
    let b = cog_core::encoder::sidecar::SidecarBackend::connect(url, vocab.clone(), table)?;
    Ok(Box::new(b))
}

#[cfg(not(feature = "sidecar"))]
fn sidecar(_: &BackendArgs, _: &Vocabulary, _: TokenEmbeddingTable) -> CliResult<Box<dyn EncoderBackend>> {
    Err(CliError::Usage("this build has no sidecar support".into()))
}
