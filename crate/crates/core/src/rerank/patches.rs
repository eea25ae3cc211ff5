use crate::bm25_index::Tokenizer;

/// A contiguous window of whole lines from one file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodePatch {
    pub path: String,
    /// 1-based, inclusive.
    pub start_line: usize,
    pub end_line: usize,
    /// The lines verbatim, including their terminators.
    pub text: String,
    pub token_count: usize,
}

impl CodePatch {
    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start_line <= end && start <= self.end_line
    }
}

/// Greedy line-wise windows: lines are appended until the window holds at
/// least `budget` tokens, then the next window starts on the following line.
/// Lines are never split, so an oversized line is a patch of its own.
pub fn split_linewise(path: &str, content: &str, budget: usize, tokenizer: &Tokenizer) -> Vec<CodePatch> {
    let budget = budget.max(1);
    let mut patches = Vec::new();
    let mut current: Option<CodePatch> = None;
    for (i, line) in content.split_inclusive('\n').enumerate() {
        let line_no = i + 1;
        let tokens = tokenizer.count(line);
        let patch = current.get_or_insert_with(|| CodePatch {
            path: path.to_string(),
            start_line: line_no,
            end_line: line_no,
            text: String::new(),
            token_count: 0,
        });
        patch.end_line = line_no;
        patch.text.push_str(line);
        patch.token_count += tokens;
        if patch.token_count >= budget {
            patches.extend(current.take());
        }
    }
    patches.extend(current);
    patches
}
