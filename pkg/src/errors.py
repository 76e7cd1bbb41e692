"""収束実験で使う例外クラス群

CLIはここで定義した例外を捕まえて、終了コードと機械可読なエラーレコード
（error.json）に変換します。
"""  # モジュールの説明

from typing import Any, Dict, Optional  # 型ヒント用


class StudyError(Exception):
    """すべての実験エラーの基底クラス"""  # クラスの説明

    exit_code = 1  # CLIの終了コード（サブクラスで上書き）
    kind = "study_error"  # error.jsonに書くエラー種別

    def __init__(self, message: str, **details: Any):
        """初期化処理

        Args:
            message: エラーメッセージ
            **details: エラーレコードに含める追加情報（trajectory_index, stepなど）
        """
        super().__init__(message)
        self.message = message  # メッセージを保存
        self.details = details  # 追加情報を保存

    def to_record(self) -> Dict[str, Any]:
        """error.json用の辞書を返す"""
        record = {'error': self.kind, 'message': self.message, 'exit_code': self.exit_code}
        record.update({key: value for key, value in self.details.items() if value is not None})  # Noneは省略
        return record


class ConfigurationError(StudyError, ValueError):
    """設定値が不正な場合のエラー（終了コード2）"""

    exit_code = 2
    kind = "configuration_error"

    def __init__(self, message: str, field: Optional[str] = None, **details: Any):
        super().__init__(message, field=field, **details)
        self.field = field  # 問題のあるフィールド名


class DomainError(StudyError, ValueError):
    """引数が定義域の外にある場合のエラー（例: u ∉ (0,1)）"""

    exit_code = 2
    kind = "domain_error"


class EvaluationError(StudyError, ArithmeticError):
    """求積ノードで被積分関数が有限値を返さなかった場合のエラー"""

    exit_code = 3
    kind = "evaluation_error"

    def __init__(self, message: str, node: Optional[float] = None, **details: Any):
        super().__init__(message, node=node, **details)
        self.node = node  # 問題のあったノード


class NotPSDError(StudyError, ArithmeticError):
    """行列が半正定値でない場合のエラー"""

    exit_code = 3
    kind = "not_psd"

    def __init__(self, message: str, min_eigenvalue: Optional[float] = None, **details: Any):
        super().__init__(message, min_eigenvalue=min_eigenvalue, **details)
        self.min_eigenvalue = min_eigenvalue


class DivergenceError(StudyError, ArithmeticError):
    """状態が非有限値になった場合のエラー（終了コード3）"""

    exit_code = 3
    kind = "divergence"

    def __init__(self, message: str, step: Optional[int] = None, trajectory_index: Optional[int] = None, **details: Any):
        super().__init__(message, step=step, trajectory_index=trajectory_index, **details)
        self.step = step  # 最初に非有限値が出たステップ
        self.trajectory_index = trajectory_index  # 該当する軌道番号


class FitError(StudyError, ValueError):
    """対数回帰ができない場合のエラー（誤差が0以下など）"""

    exit_code = 3
    kind = "fit_error"


class OutputError(StudyError, OSError):
    """結果ファイルの書き込みに失敗した場合のエラー（終了コード4）"""

    exit_code = 4
    kind = "io_error"
